#include "cytonet/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "cytonet/error.hpp"

namespace cytonet {

MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                              int num_classes) {
  if (y_true.size() != y_pred.size()) {
    throw Error("compute_metrics: prediction and label counts differ");
  }
  if (y_true.empty()) throw Error("compute_metrics: no samples");
  if (num_classes < 2) throw Error("compute_metrics: need at least 2 classes");

  MetricsReport rep;
  rep.num_classes = num_classes;
  rep.total = static_cast<std::int64_t>(y_true.size());
  rep.confusion.assign(static_cast<std::size_t>(num_classes),
                       std::vector<std::int64_t>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int yt = y_true[i], yp = y_pred[i];
    if (yt < 0 || yt >= num_classes || yp < 0 || yp >= num_classes) {
      throw Error("compute_metrics: class index out of range at sample " + std::to_string(i));
    }
    rep.confusion[static_cast<std::size_t>(yt)][static_cast<std::size_t>(yp)] += 1;
  }

  rep.support.assign(static_cast<std::size_t>(num_classes), 0);
  rep.precision.assign(static_cast<std::size_t>(num_classes), 0.0);
  rep.recall.assign(static_cast<std::size_t>(num_classes), 0.0);
  rep.f1.assign(static_cast<std::size_t>(num_classes), 0.0);
  rep.weights.assign(static_cast<std::size_t>(num_classes), 0.0);

  std::int64_t correct = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += rep.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      fn += rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
    }
    correct += tp;
    rep.support[static_cast<std::size_t>(c)] = tp + fn;
    const double p = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    rep.precision[static_cast<std::size_t>(c)] = p;
    rep.recall[static_cast<std::size_t>(c)] = r;
    rep.f1[static_cast<std::size_t>(c)] = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.total);
  double wf1 = 0, mf1 = 0;
  for (int c = 0; c < num_classes; ++c) {
    rep.weights[static_cast<std::size_t>(c)] =
        static_cast<double>(rep.support[static_cast<std::size_t>(c)]) /
        static_cast<double>(rep.total);
    wf1 += rep.f1[static_cast<std::size_t>(c)] * rep.weights[static_cast<std::size_t>(c)];
    mf1 += rep.f1[static_cast<std::size_t>(c)];
  }
  rep.weighted_f1 = wf1;
  rep.macro_f1 = mf1 / static_cast<double>(num_classes);
  return rep;
}

std::string format_metrics_report(const MetricsReport& rep,
                                  const std::vector<std::string>& class_names) {
  std::ostringstream os;
  char buf[128];
  os << "samples=" << rep.total << "\n";
  std::snprintf(buf, sizeof(buf), "accuracy=%.6f\n", rep.accuracy);
  os << buf;
  std::snprintf(buf, sizeof(buf), "weighted_f1=%.6f\n", rep.weighted_f1);
  os << buf;
  std::snprintf(buf, sizeof(buf), "macro_f1=%.6f\n", rep.macro_f1);
  os << buf;
  os << "classes=" << rep.num_classes << "\n";
  os << "\n# class precision recall f1 weight support\n";
  for (int c = 0; c < rep.num_classes; ++c) {
    const std::string name = c < static_cast<int>(class_names.size())
                                 ? class_names[static_cast<std::size_t>(c)]
                                 : ("class" + std::to_string(c));
    std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f %.6f %lld\n", name.c_str(),
                  rep.precision[static_cast<std::size_t>(c)],
                  rep.recall[static_cast<std::size_t>(c)], rep.f1[static_cast<std::size_t>(c)],
                  rep.weights[static_cast<std::size_t>(c)],
                  static_cast<long long>(rep.support[static_cast<std::size_t>(c)]));
    os << buf;
  }
  os << "\n# confusion matrix (rows: true, cols: predicted)\n";
  for (int r = 0; r < rep.num_classes; ++r) {
    for (int c = 0; c < rep.num_classes; ++c) {
      os << (c ? " " : "") << rep.confusion[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    os << "\n";
  }
  return os.str();
}

std::string format_history_row(int epoch, double train_loss, double val_accuracy) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%d,%.8f,%.8f\n", epoch, train_loss, val_accuracy);
  return buf;
}

}  // namespace cytonet
