#include "corella/reports.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace corella {

namespace {
using nlohmann::json;

json eval_to_json(const EvalResult& r) {
  json j;
  if (r.auc) {
    j["auc"] = *r.auc;
  } else {
    j["auc"] = nullptr;
  }
  j["logloss"] = r.logloss;
  j["acc"] = r.acc;
  j["n"] = r.n;
  j["positives"] = r.positives;
  return j;
}

std::string auc_field(const std::optional<double>& auc) {
  return auc ? format_metric(*auc) : "NA";
}
}  // namespace

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string groups_csv(std::span<const GroupMetrics> groups) {
  std::string out = "group,n,mean_entropy,auc,acc,logloss,scorer\n";
  for (const GroupMetrics& g : groups) {
    out += std::to_string(g.group) + "," + std::to_string(g.n) + "," +
           format_metric(g.mean_entropy) + "," + auc_field(g.auc) + "," + format_metric(g.acc) +
           "," + format_metric(g.logloss) + "," + g.scorer + "\n";
  }
  return out;
}

std::string groups_json(std::span<const GroupMetrics> groups) {
  json arr = json::array();
  for (const GroupMetrics& g : groups) {
    json j;
    j["group"] = g.group;
    j["n"] = g.n;
    j["mean_entropy"] = g.mean_entropy;
    if (g.auc) {
      j["auc"] = *g.auc;
    } else {
      j["auc"] = nullptr;
    }
    j["acc"] = g.acc;
    j["logloss"] = g.logloss;
    j["scorer"] = g.scorer;
    arr.push_back(j);
  }
  json root;
  root["groups"] = arr;
  return root.dump(2) + "\n";
}

std::string ablation_csv(std::span<const VariantReport> rows) {
  std::string out = "variant,auc,logloss,acc\n";
  for (const VariantReport& r : rows) {
    out += r.variant + "," + auc_field(r.metrics.auc) + "," + format_metric(r.metrics.logloss) +
           "," + format_metric(r.metrics.acc) + "\n";
  }
  return out;
}

std::string ablation_json(std::span<const VariantReport> rows) {
  json arr = json::array();
  for (const VariantReport& r : rows) {
    json j = eval_to_json(r.metrics);
    j["variant"] = r.variant;
    arr.push_back(j);
  }
  json root;
  root["variants"] = arr;
  return root.dump(2) + "\n";
}

std::string evaluation_json(const EvaluationReport& report) {
  json root;
  root["crm_only"] = eval_to_json(report.crm_only);
  root["llm_on_routed"] = eval_to_json(report.llm_on_routed);
  root["corella"] = eval_to_json(report.corella);
  root["n"] = report.n;
  root["routed"] = report.routed;
  root["llm_calls"] = report.llm_calls;
  root["router"] = {{"mode", report.router_mode}, {"rho", report.rho}, {"tau", report.tau}};
  return root.dump(2) + "\n";
}

std::string runlog_jsonl(std::span<const LogStep> log) {
  std::string out;
  for (const LogStep& s : log) {
    json j;
    j["stage"] = s.stage;
    j["step"] = s.step;
    j["l_llm"] = s.l_llm;
    j["l_crm"] = s.l_crm;
    j["l_cal"] = s.l_cal;
    j["total"] = s.total;
    if (s.val_auc) j["val_auc"] = *s.val_auc;
    out += j.dump() + "\n";
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace corella
