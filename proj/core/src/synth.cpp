#include "cytonet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cytonet/error.hpp"
#include "cytonet/image.hpp"
#include "cytonet/rng.hpp"

namespace cytonet {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

struct Cell {
  double cx, cy;
  double a, b;  // semi-major / semi-minor
  double cos_t, sin_t;
  double hue;
};

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

}  // namespace

SyntheticSpec SyntheticSpec::default_five(int image_size, int per_class, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.image_size = image_size;
  spec.per_class = per_class;
  spec.seed = seed;
  spec.classes = {
      {"c0_pair_giant", 2, 3, 10.0, 14.0, 1.7, 0.83, 0.90, 0.02},
      {"c1_sparse_large", 4, 6, 6.0, 9.0, 1.0, 0.72, 0.80, 0.02},
      {"c2_oval_blue", 7, 9, 5.0, 7.0, 1.5, 0.56, 0.63, 0.02},
      {"c3_round_teal", 10, 13, 4.0, 5.5, 1.0, 0.44, 0.50, 0.03},
      {"c4_tiny_swarm", 14, 18, 3.0, 4.0, 1.0, 0.93, 0.99, 0.04},
  };
  return spec;
}

Tensor<float> synthesize_image(const SyntheticSpec& spec, int class_index, int image_index) {
  if (class_index < 0 || class_index >= static_cast<int>(spec.classes.size())) {
    throw ConfigError("synthesize_image: class index out of range");
  }
  const BlobClassSpec& cls = spec.classes[static_cast<std::size_t>(class_index)];
  const int S = spec.image_size;
  const double scale = static_cast<double>(S) / 96.0;
  Rng rng(hash_combine(hash_combine(spec.seed, static_cast<std::uint64_t>(class_index) + 1),
                       static_cast<std::uint64_t>(image_index) + 1));

  Tensor<float> img({3, S, S});
  // light background with mild pixel noise
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double n = rng.uniform(-0.015, 0.015);
      img[(0 * static_cast<std::size_t>(S) + y) * static_cast<std::size_t>(S) + x] =
          static_cast<float>(clamp01(0.93 + n));
      img[(1 * static_cast<std::size_t>(S) + y) * static_cast<std::size_t>(S) + x] =
          static_cast<float>(clamp01(0.92 + n));
      img[(2 * static_cast<std::size_t>(S) + y) * static_cast<std::size_t>(S) + x] =
          static_cast<float>(clamp01(0.95 + n));
    }
  }

  const int want = spec.single_cell
                       ? 1
                       : cls.count_min + rng.uniform_int(cls.count_max - cls.count_min + 1);
  std::vector<Cell> cells;
  for (int i = 0; i < want; ++i) {
    double radius = rng.uniform(cls.radius_min, cls.radius_max) * scale;
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    bool placed = false;
    for (int shrink = 0; shrink < 8 && !placed; ++shrink) {
      const double a = radius * std::sqrt(cls.eccentricity);
      const double b = radius / std::sqrt(cls.eccentricity);
      double best_x = 0, best_y = 0, best_clearance = -1;
      for (int attempt = 0; attempt < 150; ++attempt) {
        const double margin = a + 2.0;
        double cx, cy;
        if (spec.single_cell) {
          cx = S / 2.0 + rng.uniform(-2.0, 2.0);
          cy = S / 2.0 + rng.uniform(-2.0, 2.0);
        } else {
          cx = rng.uniform(margin, S - margin);
          cy = rng.uniform(margin, S - margin);
        }
        double clearance = 1e9;
        for (const Cell& c : cells) {
          const double d = std::hypot(cx - c.cx, cy - c.cy) - (a + c.a + 2.0);
          clearance = std::min(clearance, d);
        }
        if (clearance > best_clearance) {
          best_clearance = clearance;
          best_x = cx;
          best_y = cy;
        }
        if (clearance > 0 || cells.empty()) {
          cells.push_back({cx, cy, a, b, std::cos(theta), std::sin(theta),
                           rng.uniform(cls.hue_min, cls.hue_max)});
          placed = true;
          break;
        }
      }
      if (!placed) {
        if (shrink == 7) {
          // best-effort fallback for overfull specs
          cells.push_back({best_x, best_y, a, b, std::cos(theta), std::sin(theta),
                           rng.uniform(cls.hue_min, cls.hue_max)});
          placed = true;
        } else {
          radius *= 0.85;
        }
      }
    }
  }

  for (const Cell& c : cells) {
    const double reach = c.a + 2.0;
    const int y0 = std::max(0, static_cast<int>(std::floor(c.cy - reach)));
    const int y1 = std::min(S - 1, static_cast<int>(std::ceil(c.cy + reach)));
    const int x0 = std::max(0, static_cast<int>(std::floor(c.cx - reach)));
    const int x1 = std::min(S - 1, static_cast<int>(std::ceil(c.cx + reach)));
    const Rgb cyto = hsv_to_rgb(c.hue, 0.32, 0.72);
    const Rgb nucl = hsv_to_rgb(c.hue, 0.58, 0.36);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - c.cx, dy = y - c.cy;
        const double u = (dx * c.cos_t + dy * c.sin_t) / c.a;
        const double v = (-dx * c.sin_t + dy * c.cos_t) / c.b;
        const double d = std::sqrt(u * u + v * v);
        if (d >= 1.0) continue;
        const double alpha = clamp01((1.0 - d) / 0.08);
        const double na = clamp01((0.45 - d) / 0.06);
        const double texture = rng.uniform(-cls.noise_amp, cls.noise_amp);
        const double cr = clamp01(cyto.r + na * (nucl.r - cyto.r) + texture);
        const double cg = clamp01(cyto.g + na * (nucl.g - cyto.g) + texture);
        const double cb = clamp01(cyto.b + na * (nucl.b - cyto.b) + texture);
        auto blend = [&](int ch, double cv) {
          auto& px = img[(static_cast<std::size_t>(ch) * S + y) * static_cast<std::size_t>(S) + x];
          px = static_cast<float>(clamp01(px + alpha * (cv - px)));
        };
        blend(0, cr);
        blend(1, cg);
        blend(2, cb);
      }
    }
  }
  return img;
}

Dataset synthesize_dataset(const SyntheticSpec& spec) {
  if (spec.classes.size() < 2) throw ConfigError("synthetic spec needs at least 2 classes");
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.classes.size(); ++j) {
      const auto& a = spec.classes[i];
      const auto& b = spec.classes[j];
      if (a.count_min == b.count_min && a.count_max == b.count_max &&
          a.radius_min == b.radius_min && a.radius_max == b.radius_max &&
          a.eccentricity == b.eccentricity && a.hue_min == b.hue_min && a.hue_max == b.hue_max &&
          a.noise_amp == b.noise_amp) {
        throw ConfigError("synthetic classes '" + a.name + "' and '" + b.name +
                          "' have identical parameter tuples");
      }
    }
  }
  Dataset ds;
  for (const auto& c : spec.classes) ds.class_names.push_back(c.name);
  for (int k = 0; k < static_cast<int>(spec.classes.size()); ++k) {
    for (int i = 0; i < spec.per_class; ++i) {
      Sample s;
      s.image = synthesize_image(spec, k, i);
      s.label = k;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "/img_%05d.png", i);
      s.id = spec.classes[static_cast<std::size_t>(k)].name + buf;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

void write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::exists(out_dir)) throw IoError("cannot create output directory: " + out_dir.string());
  for (int k = 0; k < static_cast<int>(spec.classes.size()); ++k) {
    const fs::path dir = out_dir / spec.classes[static_cast<std::size_t>(k)].name;
    fs::create_directories(dir, ec);
    if (!fs::exists(dir)) throw IoError("cannot create class directory: " + dir.string());
    for (int i = 0; i < spec.per_class; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "img_%05d.png", i);
      const Tensor<float> img = synthesize_image(spec, k, i);
      write_file_bytes(dir / buf, encode_png(tensor_to_image(img)));
    }
  }
  const std::string echo = format_synthetic_spec(spec);
  std::ofstream f(out_dir / "spec_echo.txt", std::ios::trunc);
  if (!f) throw IoError("cannot write spec echo file");
  f << echo;
}

std::string format_synthetic_spec(const SyntheticSpec& spec) {
  std::ostringstream os;
  os << "image_size=" << spec.image_size << "\n";
  os << "per_class=" << spec.per_class << "\n";
  os << "single_cell=" << (spec.single_cell ? 1 : 0) << "\n";
  os << "seed=" << spec.seed << "\n";
  os << "classes=" << spec.classes.size() << "\n";
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    const auto& c = spec.classes[i];
    const std::string p = "class" + std::to_string(i) + ".";
    os << p << "name=" << c.name << "\n";
    os << p << "count_min=" << c.count_min << "\n";
    os << p << "count_max=" << c.count_max << "\n";
    os << p << "radius_min=" << c.radius_min << "\n";
    os << p << "radius_max=" << c.radius_max << "\n";
    os << p << "eccentricity=" << c.eccentricity << "\n";
    os << p << "hue_min=" << c.hue_min << "\n";
    os << p << "hue_max=" << c.hue_max << "\n";
    os << p << "noise_amp=" << c.noise_amp << "\n";
  }
  return os.str();
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("synthetic spec: malformed line '" + line + "'");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  SyntheticSpec spec = SyntheticSpec::default_five();
  auto get = [&kv](const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  };
  spec.image_size = std::stoi(get("image_size", std::to_string(spec.image_size)));
  spec.per_class = std::stoi(get("per_class", std::to_string(spec.per_class)));
  spec.single_cell = get("single_cell", "0") == "1";
  spec.seed = std::stoull(get("seed", std::to_string(spec.seed)));
  const int n = std::stoi(get("classes", std::to_string(spec.classes.size())));
  if (kv.count("class0.name")) spec.classes.clear();
  for (int i = 0; i < n && kv.count("class" + std::to_string(i) + ".name"); ++i) {
    const std::string p = "class" + std::to_string(i) + ".";
    BlobClassSpec c;
    c.name = get(p + "name", "class" + std::to_string(i));
    c.count_min = std::stoi(get(p + "count_min", "4"));
    c.count_max = std::stoi(get(p + "count_max", "6"));
    c.radius_min = std::stod(get(p + "radius_min", "5"));
    c.radius_max = std::stod(get(p + "radius_max", "8"));
    c.eccentricity = std::stod(get(p + "eccentricity", "1"));
    c.hue_min = std::stod(get(p + "hue_min", "0.5"));
    c.hue_max = std::stod(get(p + "hue_max", "0.6"));
    c.noise_amp = std::stod(get(p + "noise_amp", "0.02"));
    spec.classes.push_back(c);
  }
  if (spec.image_size < 16) throw ConfigError("synthetic spec: image size must be >= 16");
  if (spec.per_class < 1) throw ConfigError("synthetic spec: per_class must be >= 1");
  return spec;
}

}  // namespace cytonet
