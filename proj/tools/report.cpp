#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hsrgan/core/error.hpp"
#include "hsrgan/io/tensor_file.hpp"
#include "hsrgan/synth/synthdata.hpp"
#include "svg.hpp"

namespace hsrgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  fs::path dir;  // holds eval/
  std::string variant;
  json summary;
};

std::vector<Run> find_runs(const fs::path& root) {
  std::vector<Run> runs;
  std::vector<fs::path> files;
  auto consider = [&](const fs::path& dir) {
    const fs::path f = dir / "eval" / "metrics.json";
    if (fs::is_regular_file(f)) files.push_back(f);
  };
  consider(root);
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    if (it.depth() >= 3) it.disable_recursion_pending();
    if (it->is_directory() && it->path().filename() != "eval") consider(it->path());
  }
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  for (const auto& f : files) {
    json doc;
    try {
      doc = json::parse(io::read_file(f));
    } catch (const json::exception& e) {
      throw SchemaError(f.string() + " is not valid JSON: " + e.what());
    }
    runs.push_back({f.parent_path().parent_path(), doc.value("variant", std::string("baseline")),
                    doc.value("summary", json::object())});
  }
  return runs;
}

std::vector<double> collect(const std::vector<Run>& runs, const std::string& variant, const std::string& key) {
  std::vector<double> out;
  for (const auto& r : runs)
    if (r.variant == variant && r.summary.contains(key) && r.summary[key].is_number())
      out.push_back(r.summary[key].get<double>());
  return out;
}

std::string cell(const std::vector<double>& values) {
  if (values.empty()) return "";
  std::ostringstream s;
  s.precision(10);
  s << median(values);
  return s.str();
}

json median_or_null(const std::vector<double>& values) {
  return values.empty() ? json(nullptr) : json(median(values));
}

// Element-wise median of equal-length vectors stored under `key`.
std::vector<double> vector_median(const std::vector<Run>& runs, const std::string& variant, const std::string& key) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : runs)
    if (r.variant == variant && r.summary.contains(key) && r.summary[key].is_array())
      rows.push_back(r.summary[key].get<std::vector<double>>());
  if (rows.empty()) return {};
  const size_t n = rows.front().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> col;
    for (const auto& row : rows)
      if (row.size() == n) col.push_back(row[i]);
    out[i] = median(col);
  }
  return out;
}

std::vector<double> read_ppl_values(const fs::path& csv) {
  std::vector<double> values;
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    if (last != std::string::npos) values.push_back(std::stod(line.substr(last + 1)));
  }
  return values;
}

}  // namespace

const std::vector<std::string>& report_variants() {
  static const std::vector<std::string> v = {"baseline", "plr", "hsr", "plr+hsr"};
  return v;
}

double median(std::vector<double> values) {
  if (values.empty()) throw RangeError("median of an empty set");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

json write_report(const fs::path& root, const fs::path& dir) {
  const std::vector<Run> runs = find_runs(root);
  if (runs.empty()) throw MissingArtifactError("no eval/metrics.json found under " + root.string());

  std::ostringstream summary;
  summary << "variant,fid_proxy,ppl\n";
  std::ostringstream als;
  als.precision(10);
  als << "variant";
  for (auto name : synth::kFactorNames) als << ',' << name;
  als << ",mean\n";
  json variants = json::object();
  for (const auto& v : report_variants()) {
    const auto fid = collect(runs, v, "fid_proxy"), ppl = collect(runs, v, "ppl"), als_mean = collect(runs, v, "als_mean");
    summary << v << ',' << cell(fid) << ',' << cell(ppl) << '\n';
    const auto per_attr = vector_median(runs, v, "als_per_attribute");
    als << v;
    for (int k = 0; k < synth::kFactorCount; ++k) {
      als << ',';
      if (per_attr.size() == static_cast<size_t>(synth::kFactorCount)) als << per_attr[static_cast<size_t>(k)];
    }
    als << ',' << cell(als_mean) << '\n';
    int64_t count = 0;
    for (const auto& r : runs) count += r.variant == v;
    variants[v] = {{"runs", count},
                   {"fid_proxy", fid},
                   {"ppl", ppl},
                   {"als_mean", als_mean},
                   {"fid_proxy_median", median_or_null(fid)},
                   {"ppl_median", median_or_null(ppl)},
                   {"als_mean_median", median_or_null(als_mean)},
                   {"als_per_attribute_median", per_attr},
                   {"als_per_t_median", vector_median(runs, v, "als_per_t")}};
  }
  io::write_atomically(dir / "summary.csv", summary.str());
  io::write_atomically(dir / "als_summary.csv", als.str());

  // PPL histograms pooled per variant over shared edges.
  std::map<std::string, std::vector<double>> pooled;
  double hi = 0.0;
  for (const auto& r : runs) {
    const fs::path csv = r.dir / "eval" / "ppl_values.csv";
    if (!fs::exists(csv)) continue;
    auto values = read_ppl_values(csv);
    for (double x : values)
      if (std::isfinite(x)) hi = std::max(hi, x);
    auto& dst = pooled[r.variant];
    dst.insert(dst.end(), values.begin(), values.end());
  }
  const int bins = 50;
  std::vector<Series> hist;
  for (const auto& [variant, values] : pooled) {
    Series s{variant, {}, {}};
    std::vector<double> counts(bins, 0.0);
    for (double x : values) {
      if (!std::isfinite(x) || hi <= 0.0) continue;
      counts[static_cast<size_t>(std::min<int>(bins - 1, static_cast<int>(x / hi * bins)))] += 1.0;
    }
    for (int b = 0; b < bins; ++b) {
      s.x.push_back((b + 0.5) * hi / bins);
      s.y.push_back(values.empty() ? 0.0 : counts[static_cast<size_t>(b)] / static_cast<double>(values.size()));
    }
    hist.push_back(std::move(s));
  }
  write_line_plot(dir / "ppl_histogram.svg", {"Path length distribution", "path length", "fraction of pairs"}, hist);

  std::vector<Series> per_t;
  for (const auto& v : report_variants()) {
    const auto y = variants[v]["als_per_t_median"].get<std::vector<double>>();
    if (y.empty()) continue;
    Series s{v, {}, y};
    for (size_t i = 0; i < y.size(); ++i) s.x.push_back(static_cast<double>(i) / static_cast<double>(y.size() - 1));
    per_t.push_back(std::move(s));
  }
  write_line_plot(dir / "als_per_t.svg", {"Linearity deviation along the path", "t", "mean squared deviation"}, per_t);

  // Attribute scores along the edit re-projection path of the first run per variant.
  std::vector<Series> attr;
  std::vector<std::string> seen;
  for (const auto& r : runs) {
    const fs::path csv = r.dir / "edit" / "linearity.csv";
    if (!fs::exists(csv) || std::find(seen.begin(), seen.end(), r.variant) != seen.end()) continue;
    seen.push_back(r.variant);
    std::map<std::string, Series> by_attr;
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string t, name, score;
      std::getline(ss, t, ',');
      std::getline(ss, name, ',');
      std::getline(ss, score, ',');
      auto& s = by_attr[name];
      s.label = r.variant + " " + name;
      s.x.push_back(std::stod(t));
      s.y.push_back(std::stod(score));
    }
    for (auto& [name, s] : by_attr) attr.push_back(std::move(s));
  }
  write_line_plot(dir / "attribute_vs_t.svg", {"Attribute scores along the edit path", "t", "score"}, attr);

  json run_list = json::array();
  for (const auto& r : runs) run_list.push_back({{"dir", r.dir.string()}, {"variant", r.variant}, {"summary", r.summary}});
  const json doc = {{"runs", run_list}, {"variants", variants}};
  io::write_atomically(dir / "report.json", doc.dump(2) + "\n");
  return variants;
}

}  // namespace hsrgan::cli
