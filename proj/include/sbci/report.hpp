#pragma once

// Line-delimited JSON reports. An evaluation report holds one record per
// test trial followed by one summary record:
//
//   {"bits":[0,0,1,0],"column_ties":[false,...],"decoded":3,"delta":[2.0,2.0,0.0,2.0],"label":3,"tie":false,"trial":0}
//   ...
//   {"summary":{"accuracy":0.9,"chance":0.25,"classes":4,"confusion":[[...],...],"correct":216,"kappa":0.8667,"n":240}}
//
// "label" is null for unlabeled trials; the summary covers labeled trials
// only and is omitted when there are none.

#include <istream>
#include <json.hpp>
#include <ostream>
#include <string>

#include "sbci/pipeline.hpp"

namespace sbci {

inline nlohmann::json summary_json(const EvalSummary& s) {
  return {{"n", s.n},         {"correct", s.correct}, {"classes", s.classes},    {"accuracy", s.accuracy},
          {"chance", s.chance}, {"kappa", s.kappa},     {"confusion", s.confusion}};
}

inline nlohmann::json trial_record(std::size_t index, Label truth, const VoteRecord& r) {
  nlohmann::json j;
  j["trial"] = index;
  j["label"] = truth == kUnlabeled ? nlohmann::json() : nlohmann::json(truth);
  j["decoded"] = r.decoded.label;
  j["bits"] = r.bits;
  j["delta"] = r.decoded.delta;
  j["tie"] = r.decoded.tie;
  auto ties = nlohmann::json::array();
  for (const auto& c : r.columns) ties.push_back(c.tie);
  j["column_ties"] = ties;
  return j;
}

/// Writes the report and returns the summary (n == 0 when nothing is labeled).
inline EvalSummary write_eval_report(std::ostream& out, std::span<const CovarianceFeature> trials,
                                     std::span<const VoteRecord> records, std::size_t k) {
  std::vector<Label> truth, pred;
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << trial_record(i, trials[i].label, records[i]).dump() << '\n';
    if (trials[i].label != kUnlabeled) {
      truth.push_back(trials[i].label);
      pred.push_back(records[i].decoded.label);
    }
  }
  EvalSummary s;
  if (!truth.empty()) {
    s = summarize(truth, pred, k);
    out << nlohmann::json{{"summary", summary_json(s)}}.dump() << '\n';
  }
  return s;
}

/// Recomputes the summary of an evaluation report from its trial records.
inline EvalSummary summarize_report(std::istream& in) {
  std::vector<Label> truth, pred;
  std::size_t k = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw FormatError("report line " + std::to_string(line_no) + " is not JSON");
    }
    if (j.contains("summary")) continue;
    if (!j.contains("decoded") || !j.contains("delta"))
      throw FormatError("report line " + std::to_string(line_no) + " is not a trial record");
    k = std::max(k, j.at("delta").size());
    if (j.at("label").is_null()) continue;
    truth.push_back(j.at("label").get<Label>());
    pred.push_back(j.at("decoded").get<Label>());
  }
  if (truth.empty()) throw DegenerateInputError("report has no labeled trial records");
  return summarize(truth, pred, k);
}

}  // namespace sbci
