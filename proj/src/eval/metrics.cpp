#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "mio/eval.hpp"

namespace mio::eval {

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b) || a.empty()) {
    throw std::invalid_argument("psnr: image shapes differ or are empty");
  }
  double sse = 0.0;
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    sse += d * d;
  }
  if (sse == 0.0) return kInf;
  return 10.0 * std::log10(static_cast<double>(va.size()) / sse);
}

nlohmann::json number_json(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

namespace {

double json_number(const nlohmann::json& j) {
  if (j.is_string() && j.get<std::string>() == "inf") return kInf;
  return j.get<double>();
}

std::string fixed2(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string format_delta(double delta) {
  if (std::isinf(delta)) return delta > 0 ? "+inf" : "-inf";
  const double r = std::round(delta * 100.0) / 100.0;
  if (r == 0.0) return "0.00";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.2f", r);
  return buf;
}

nlohmann::json ReportRow::to_json() const {
  nlohmann::json psnr_j = nlohmann::json::object(), count_j = nlohmann::json::object();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string key(1, task_letter(tasks[i]));
    psnr_j[key] = number_json(task_psnr[i]);
    count_j[key] = samples[i];
  }
  nlohmann::json j = {{"tag", tag}, {"tasks", task_letters(tasks)}, {"psnr", psnr_j},
                      {"samples", count_j}, {"avg", number_json(avg)}};
  if (baseline) {
    j["ipv"] = "baseline";
  } else if (ipv) {
    j["ipv"] = format_delta(*ipv);
    j["ipv_value"] = number_json(*ipv);
  }
  return j;
}

ReportRow ReportRow::from_json(const nlohmann::json& j) {
  ReportRow r;
  r.tag = j.at("tag").get<std::string>();
  r.tasks = parse_task_letters(j.at("tasks").get<std::string>());
  for (TaskId t : r.tasks) {
    const std::string key(1, task_letter(t));
    r.task_psnr.push_back(json_number(j.at("psnr").at(key)));
    r.samples.push_back(j.at("samples").at(key).get<int>());
  }
  r.avg = json_number(j.at("avg"));
  return r;
}

ReportTable improvement_table(std::vector<ReportRow> rows, const std::string& baseline_tag, const std::string& group) {
  auto base = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& r) { return r.tag == baseline_tag; });
  if (base == rows.end()) {
    std::string known;
    for (const auto& r : rows) known += (known.empty() ? "" : ", ") + r.tag;
    throw std::invalid_argument("improvement_table: baseline '" + baseline_tag + "' not among rows (" + known + ")");
  }
  const double base_avg = base->avg;
  for (auto& r : rows) {
    if (r.tasks != base->tasks) {
      throw std::invalid_argument("improvement_table: row '" + r.tag + "' covers tasks " + task_letters(r.tasks) +
                                  " but the baseline covers " + task_letters(base->tasks));
    }
    r.baseline = r.tag == baseline_tag;
    if (r.baseline) {
      r.ipv.reset();
    } else {
      r.ipv = r.avg - base_avg;
    }
  }
  ReportTable t;
  t.group = group;
  t.baseline = baseline_tag;
  t.rows = std::move(rows);
  return t;
}

nlohmann::json ReportTable::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) rows_j.push_back(r.to_json());
  return {{"group", group}, {"baseline", baseline}, {"rows", rows_j}};
}

std::string ReportTable::markdown() const {
  std::ostringstream out;
  const auto& tasks = rows.empty() ? std::vector<TaskId>{} : rows.front().tasks;
  out << "| Model |";
  for (TaskId t : tasks) out << ' ' << task_label(t) << " |";
  out << " Avg. | Ipv. |\n|---|";
  for (std::size_t i = 0; i < tasks.size(); ++i) out << "---:|";
  out << "---:|---:|\n";
  for (const auto& r : rows) {
    out << "| " << r.tag << " |";
    for (double v : r.task_psnr) out << ' ' << fixed2(v) << " |";
    out << ' ' << fixed2(r.avg) << " | " << (r.baseline ? std::string("baseline") : r.ipv ? format_delta(*r.ipv) : "")
        << " |\n";
  }
  return out.str();
}

double calinski_harabasz(const std::vector<std::vector<double>>& features, const std::vector<int>& labels) {
  const std::size_t n = features.size();
  if (n != labels.size()) throw std::invalid_argument("calinski_harabasz: features and labels differ in length");
  if (n == 0) throw std::invalid_argument("calinski_harabasz: no samples");
  const std::size_t d = features.front().size();
  for (const auto& f : features) {
    if (f.size() != d) throw std::invalid_argument("calinski_harabasz: ragged feature rows");
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);
  const std::size_t k = groups.size();
  if (k < 2) throw std::invalid_argument("calinski_harabasz: need at least two labels");
  for (const auto& [label, idx] : groups) {
    if (idx.size() < 2) {
      throw std::invalid_argument("calinski_harabasz: label " + std::to_string(label) + " has fewer than two samples");
    }
  }

  std::vector<double> mean(d, 0.0);
  for (const auto& f : features)
    for (std::size_t j = 0; j < d; ++j) mean[j] += f[j];
  for (double& v : mean) v /= static_cast<double>(n);

  double trace_b = 0.0, trace_w = 0.0;
  for (const auto& [label, idx] : groups) {
    std::vector<double> c(d, 0.0);
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < d; ++j) c[j] += features[i][j];
    for (double& v : c) v /= static_cast<double>(idx.size());
    for (std::size_t j = 0; j < d; ++j) trace_b += static_cast<double>(idx.size()) * (c[j] - mean[j]) * (c[j] - mean[j]);
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < d; ++j) trace_w += (features[i][j] - c[j]) * (features[i][j] - c[j]);
  }
  if (trace_w == 0.0) return trace_b > 0.0 ? kInf : 0.0;
  return (trace_b / static_cast<double>(k - 1)) / (trace_w / static_cast<double>(n - k));
}

std::vector<std::array<double, 2>> project_2d(const std::vector<std::vector<double>>& features) {
  const std::size_t n = features.size();
  if (n < 3) throw std::invalid_argument("project_2d: need at least 3 samples");
  const std::size_t d = features.front().size();
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (features[i].size() != d) throw std::invalid_argument("project_2d: ragged feature rows");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = features[i][j];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto& evals = es.eigenvalues();  // ascending
  const double top = std::max(evals(d - 1), 0.0);
  std::vector<std::array<double, 2>> out(n, {0.0, 0.0});
  for (int comp = 0; comp < 2 && comp < static_cast<int>(d); ++comp) {
    const Eigen::Index col = static_cast<Eigen::Index>(d) - 1 - comp;
    if (!(evals(col) > 1e-12 * std::max(top, 1e-300))) continue;  // no variance along this axis
    const Eigen::VectorXd scores = x * es.eigenvectors().col(col);
    Eigen::Index arg = 0;
    scores.cwiseAbs().maxCoeff(&arg);
    const double sign = scores(arg) < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out[i][comp] = sign * scores(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace mio::eval
