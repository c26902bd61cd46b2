#include "lrm/reports.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace lrm::reports {
namespace {

using Table = std::vector<std::vector<std::string>>;

void set_precision(std::ostream& out) { out.precision(std::numeric_limits<double>::max_digits10); }

void check_field(const std::string& s) {
  LRM_REQUIRE(s.find_first_of(",\n\r\"") == std::string::npos, "CSV field contains a separator: " + s);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Reads a CSV whose header must equal `header` (or start with it when prefix is set).
Table read_table(const std::filesystem::path& path, const std::vector<std::string>& header, bool prefix = false,
                 std::vector<std::string>* actual = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto cols = split(line);
  const bool ok = prefix ? cols.size() >= header.size() && std::equal(header.begin(), header.end(), cols.begin())
                         : cols == header;
  if (!ok) throw IoError(path.string() + " has an unexpected header: " + line);
  if (actual) *actual = cols;
  Table rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != cols.size()) throw IoError(path.string() + ": row width differs from the header");
    rows.push_back(std::move(fields));
  }
  return rows;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("not a number: " + s);
  return v;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("not an integer: " + s);
  return v;
}

void write_text(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  write_file_atomic(path, [&](std::ostream& out) {
    set_precision(out);
    body(out);
  });
}

}  // namespace

void write_history_csv(const std::filesystem::path& path, const metric::History& history) {
  write_text(path, [&](std::ostream& out) {
    out << "step,classifier_acc,adv_real_acc,adv_syn_acc,adv_misc_acc,adv_weighted_acc,loss\n";
    for (const auto& r : history.rows)
      out << r.step << ',' << r.classifier_acc << ',' << r.adv_acc[0] << ',' << r.adv_acc[1] << ',' << r.adv_acc[2]
          << ',' << r.adv_weighted_acc << ',' << r.loss << '\n';
  });
}

metric::History read_history_csv(const std::filesystem::path& path, double lambda) {
  const auto rows = read_table(path, {"step", "classifier_acc", "adv_real_acc", "adv_syn_acc", "adv_misc_acc",
                                      "adv_weighted_acc", "loss"});
  metric::History h;
  h.lambda = lambda;
  for (const auto& f : rows) {
    metric::HistoryRow r;
    r.step = to_int(f[0]);
    r.classifier_acc = to_double(f[1]);
    r.adv_acc = {to_double(f[2]), to_double(f[3]), to_double(f[4])};
    r.adv_weighted_acc = to_double(f[5]);
    r.loss = to_double(f[6]);
    h.rows.push_back(r);
  }
  return h;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
  for (const auto& r : rows) check_field(r.scene_id);
  write_text(path, [&](std::ostream& out) {
    out << "scene_id,S_real,S_syn,S_misc\n";
    for (const auto& r : rows) out << r.scene_id << ',' << r.scene[0] << ',' << r.scene[1] << ',' << r.scene[2] << '\n';
  });
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
  std::vector<ScoreRow> out;
  for (const auto& f : read_table(path, {"scene_id", "S_real", "S_syn", "S_misc"}))
    out.push_back({f[0], {to_double(f[1]), to_double(f[2]), to_double(f[3])}});
  return out;
}

std::vector<QueryRow> query_rows(const std::string& scene_id, const metric::MetricScores& scores) {
  std::vector<QueryRow> out;
  for (Eigen::Index q = 0; q < scores.per_query.rows(); ++q)
    out.push_back({scene_id, scores.query_points(q, 0), scores.query_points(q, 1), scores.query_points(q, 2),
                   scores.per_query(q, 0), scores.per_query(q, 1), scores.per_query(q, 2)});
  return out;
}

void write_query_csv(const std::filesystem::path& path, std::span<const QueryRow> rows) {
  for (const auto& r : rows) check_field(r.scene_id);
  write_text(path, [&](std::ostream& out) {
    out << "scene_id,qx,qy,qz,p_real,p_syn,p_misc\n";
    for (const auto& r : rows)
      out << r.scene_id << ',' << r.qx << ',' << r.qy << ',' << r.qz << ',' << r.p_real << ',' << r.p_syn << ','
          << r.p_misc << '\n';
  });
}

std::vector<QueryRow> read_query_csv(const std::filesystem::path& path) {
  std::vector<QueryRow> out;
  for (const auto& f : read_table(path, {"scene_id", "qx", "qy", "qz", "p_real", "p_syn", "p_misc"}))
    out.push_back({f[0], to_double(f[1]), to_double(f[2]), to_double(f[3]), to_double(f[4]), to_double(f[5]),
                   to_double(f[6])});
  return out;
}

void write_baselines_csv(const std::filesystem::path& path, std::span<const baselines::BaselineRow> rows) {
  for (const auto& r : rows) {
    check_field(r.scene_id);
    check_field(r.method);
    LRM_REQUIRE(r.scene_id != "mean" && r.scene_id != "std", "scene ids mean and std are reserved");
  }
  const auto aggregates = baselines::aggregate(rows);
  write_text(path, [&](std::ostream& out) {
    out << "scene_id,method,cd_m,mae_m,mse_m2\n";
    auto put = [&](const baselines::BaselineRow& r) {
      out << r.scene_id << ',' << r.method << ',' << r.cd_m << ',' << r.mae_m << ',' << r.mse_m2 << '\n';
    };
    for (const auto& r : rows) put(r);
    for (const auto& a : aggregates) {
      put(a.mean);
      put(a.stddev);
    }
  });
}

BaselineReport read_baselines_csv(const std::filesystem::path& path) {
  BaselineReport report;
  for (const auto& f : read_table(path, {"scene_id", "method", "cd_m", "mae_m", "mse_m2"})) {
    const baselines::BaselineRow row{f[0], f[1], to_double(f[2]), to_double(f[3]), to_double(f[4])};
    if (row.scene_id == "mean" || row.scene_id == "std") {
      auto it = std::find_if(report.aggregates.begin(), report.aggregates.end(),
                             [&](const baselines::Aggregate& a) { return a.method == row.method; });
      if (it == report.aggregates.end()) {
        report.aggregates.push_back({row.method, {}, {}});
        it = report.aggregates.end() - 1;
      }
      (row.scene_id == "mean" ? it->mean : it->stddev) = row;
    } else {
      report.rows.push_back(row);
    }
  }
  return report;
}

std::string_view layout_name(FeatureLayout l) { return l == FeatureLayout::PerQuery ? "per-query" : "flattened"; }

FeatureLayout parse_layout(std::string_view name) {
  if (name == "per-query") return FeatureLayout::PerQuery;
  if (name == "flattened") return FeatureLayout::Flattened;
  throw InvalidArgument("unknown feature layout " + std::string(name));
}

std::vector<FeatureRow> feature_rows(const metric::FeatureMatrix<float>& features, metric::Category category,
                                     int dataset_id, FeatureLayout layout) {
  const auto& z = features.z;
  std::vector<FeatureRow> out;
  if (layout == FeatureLayout::PerQuery) {
    for (Eigen::Index q = 0; q < z.rows(); ++q) {
      FeatureRow r{category, dataset_id, {}};
      r.z.assign(z.row(q).data(), z.row(q).data() + z.cols());
      out.push_back(std::move(r));
    }
  } else {
    FeatureRow r{category, dataset_id, {}};
    r.z.assign(z.data(), z.data() + z.size());
    out.push_back(std::move(r));
  }
  return out;
}

void write_features_csv(const std::filesystem::path& path, std::span<const FeatureRow> rows) {
  const std::size_t width = rows.empty() ? 0 : rows.front().z.size();
  for (const auto& r : rows) LRM_REQUIRE(r.z.size() == width, "feature rows differ in width");
  write_text(path, [&](std::ostream& out) {
    out << "category,dataset_id";
    for (std::size_t i = 0; i < width; ++i) out << ",z" << i;
    out << '\n';
    for (const auto& r : rows) {
      out << metric::category_name(r.category) << ',' << r.dataset_id;
      for (double v : r.z) out << ',' << v;
      out << '\n';
    }
  });
}

std::vector<FeatureRow> read_features_csv(const std::filesystem::path& path) {
  std::vector<std::string> header;
  const auto table = read_table(path, {"category", "dataset_id"}, true, &header);
  for (std::size_t i = 2; i < header.size(); ++i)
    if (header[i] != "z" + std::to_string(i - 2)) throw IoError(path.string() + ": bad feature column " + header[i]);
  std::vector<FeatureRow> out;
  for (const auto& f : table) {
    FeatureRow r;
    try {
      r.category = metric::parse_category(f[0]);
    } catch (const InvalidArgument& e) {
      throw IoError(e.what());
    }
    r.dataset_id = static_cast<int>(to_int(f[1]));
    for (std::size_t i = 2; i < f.size(); ++i) r.z.push_back(to_double(f[i]));
    out.push_back(std::move(r));
  }
  return out;
}

io::Rgb score_color(double p_real, double p_syn, double p_misc) {
  const std::array<double, 3> p{p_real, p_syn, p_misc};
  io::Rgb out{};
  for (int ch = 0; ch < 3; ++ch) {
    double v = 0.0;
    for (int c = 0; c < 3; ++c) v += p[c] * kCategoryColors[c][ch];
    out[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

void write_score_ply(const std::filesystem::path& path, const metric::MetricScores& scores) {
  std::vector<Vec3> points;
  std::vector<io::Rgb> colors;
  for (Eigen::Index q = 0; q < scores.per_query.rows(); ++q) {
    points.emplace_back(scores.query_points(q, 0), scores.query_points(q, 1), scores.query_points(q, 2));
    colors.push_back(score_color(scores.per_query(q, 0), scores.per_query(q, 1), scores.per_query(q, 2)));
  }
  io::write_colored_ply(path, points, colors);
}

}  // namespace lrm::reports
