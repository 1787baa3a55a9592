#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cytonet {

/// Confusion matrix plus per-class precision/recall/F1 and the
/// support-weighted F1. Zero-division conventions: precision and recall are 0
/// when their denominator is 0, F1 is 0 when precision + recall is 0, and
/// zero-support classes carry weight 0.
struct MetricsReport {
  int num_classes = 0;
  std::int64_t total = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][pred]
  std::vector<std::int64_t> support;
  std::vector<double> precision, recall, f1, weights;
  double accuracy = 0;
  double weighted_f1 = 0;
  double macro_f1 = 0;
};

MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                              int num_classes);

/// Key-value header plus a per-class table and the KxK confusion matrix block.
std::string format_metrics_report(const MetricsReport& rep,
                                  const std::vector<std::string>& class_names);

/// One CSV-style history row: epoch, train loss, validation accuracy.
std::string format_history_row(int epoch, double train_loss, double val_accuracy);

}  // namespace cytonet
