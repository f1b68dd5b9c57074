#pragma once

// Ensemble checkpoint directory:
//
//   manifest.json      format tag, coding matrix, per-column model file,
//                      tau and reference indices, reference-set digest
//   column_NN.model    one twin-network checkpoint per column (NN from 01)
//   references.sbta    the reference trials as a feature archive
//
// The digest is FNV-1a 64 over the bytes of references.sbta, printed as 16
// hex digits; loading refuses a reference file that does not match.

#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "sbci/data/archive.hpp"
#include "sbci/pipeline.hpp"

namespace sbci {

inline constexpr char kEnsembleFormat[] = "sbci-ensemble";
inline constexpr int kEnsembleVersion = 1;

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string column_file(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "column_%02zu.model", j + 1);
  return buf;
}

inline nlohmann::json matrix_json(const CodingMatrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.classes(); ++i) {
    auto row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.columns(); ++j) row.push_back(m.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline CodingMatrix matrix_from_json(const nlohmann::json& rows, Scheme scheme) {
  if (!rows.is_array() || rows.empty() || !rows.front().is_array())
    throw FormatError("manifest: matrix must be a non-empty array of rows");
  const std::size_t k = rows.size(), l = rows.front().size();
  std::vector<std::uint8_t> e;
  for (const auto& r : rows) {
    if (!r.is_array() || r.size() != l) throw FormatError("manifest: ragged coding matrix");
    for (const auto& v : r) e.push_back(v.get<std::uint8_t>());
  }
  return CodingMatrix(k, l, std::move(e), scheme);
}

/// Writes the checkpoint directory (created if missing). `extra` lands in
/// the manifest under "run" for provenance.
inline void save_ensemble(const std::string& dir, const Ensemble& e, double sample_rate,
                          const nlohmann::json& extra = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto refs = data::write_archive(
      data::from_features(e.references, static_cast<int>(e.matrix.classes()), sample_rate));
  io::write_file((fs::path(dir) / "references.sbta").string(), refs);

  nlohmann::json manifest;
  manifest["format"] = kEnsembleFormat;
  manifest["version"] = kEnsembleVersion;
  manifest["scheme"] = to_string(e.matrix.scheme());
  manifest["classes"] = e.matrix.classes();
  manifest["matrix"] = matrix_json(e.matrix);
  manifest["references"] = "references.sbta";
  manifest["references_digest"] = hex64(io::fnv1a(refs));
  manifest["columns"] = nlohmann::json::array();
  for (std::size_t j = 0; j < e.classifiers.size(); ++j) {
    const auto& c = e.classifiers[j];
    const auto name = column_file(j);
    io::write_file((fs::path(dir) / name).string(), save_model(c.model));
    manifest["columns"].push_back({{"model", name}, {"tau", c.tau}, {"s0", c.ref0}, {"s1", c.ref1}});
  }
  manifest["run"] = extra;
  const auto text = manifest.dump(2) + "\n";
  io::write_file((fs::path(dir) / "manifest.json").string(), io::Bytes(text.begin(), text.end()));
}

inline nlohmann::json read_manifest(const std::string& dir) {
  const auto bytes = io::read_file((std::filesystem::path(dir) / "manifest.json").string());
  try {
    auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (j.value("format", "") != kEnsembleFormat) throw FormatError("manifest: not an ensemble checkpoint");
    if (j.value("version", 0) != kEnsembleVersion)
      throw FormatError("manifest: unsupported version " + j.value("version", nlohmann::json()).dump());
    return j;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("manifest: ") + ex.what());
  }
}

inline Ensemble load_ensemble(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto manifest = read_manifest(dir);
  Ensemble e;
  try {
    const auto scheme_name = manifest.at("scheme").get<std::string>();
    const Scheme scheme = scheme_name == "ovr" ? Scheme::ovr : scheme_name == "ovo" ? Scheme::ovo : Scheme::custom;
    e.matrix = matrix_from_json(manifest.at("matrix"), scheme);
    const auto refs = io::read_file((fs::path(dir) / manifest.at("references").get<std::string>()).string());
    const auto digest = hex64(io::fnv1a(refs));
    if (digest != manifest.at("references_digest").get<std::string>())
      throw FormatError("reference set digest " + digest + " does not match the manifest");
    e.references = data::to_features(data::read_archive(refs));
    const auto& cols = manifest.at("columns");
    if (cols.size() != e.matrix.columns())
      throw FormatError("manifest lists " + std::to_string(cols.size()) + " models for " +
                        std::to_string(e.matrix.columns()) + " columns");
    for (const auto& col : cols) {
      ColumnClassifier c;
      c.model = load_model<float>(io::read_file((fs::path(dir) / col.at("model").get<std::string>()).string()));
      c.tau = col.at("tau").get<double>();
      c.ref0 = col.at("s0").get<std::vector<std::size_t>>();
      c.ref1 = col.at("s1").get<std::vector<std::size_t>>();
      c.prepare(e.references);
      e.classifiers.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("manifest: ") + ex.what());
  }
  return e;
}

}  // namespace sbci
