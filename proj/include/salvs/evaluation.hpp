#pragma once

// Directory-level evaluation: pairs prediction and ground-truth masks by
// file stem and reports per-pair rows plus dataset aggregates.

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "salvs/error.hpp"
#include "salvs/image_io.hpp"
#include "salvs/metrics.hpp"

namespace salvs::metrics {

struct EvalOptions {
  double tau = 0.5;
  double beta2 = 0.3;
};

struct EvalRow {
  std::string stem;
  double iou = 0.0;
  double mae = 0.0;
  double max_f = 0.0;
  std::int64_t intersection = 0;
  std::int64_t uni = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // sorted by stem
  double miou = 0.0;
  double ciou = 0.0;
  double mae = 0.0;
  double max_f = 0.0;
};

inline std::map<std::string, std::filesystem::path> masks_by_stem(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext != ".png" && ext != ".pgm") continue;
    const std::string stem = e.path().stem().string();
    if (!out.emplace(stem, e.path()).second) {
      throw Error(ErrorCode::UnpairedFiles, "stem '" + stem + "' appears twice in " + dir.string());
    }
  }
  return out;
}

/// Stems present in only one of the two directories.
inline std::vector<std::string> unpaired_stems(const std::map<std::string, std::filesystem::path>& pred,
                                               const std::map<std::string, std::filesystem::path>& gt) {
  std::vector<std::string> out;
  for (const auto& [k, v] : pred)
    if (!gt.count(k)) out.push_back(k);
  for (const auto& [k, v] : gt)
    if (!pred.count(k)) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

inline EvalReport evaluate_pairs(const std::vector<std::pair<std::string, EvalPair>>& pairs, EvalOptions opt = {}) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyDataset, "no evaluation pairs");
  EvalReport r;
  IouCounts total;
  for (const auto& [stem, p] : pairs) {
    const IouCounts c = iou_counts(p.pred, p.gt, opt.tau);
    EvalRow row{stem, c.iou(), metrics::mae(p.pred, p.gt), max_f_measure(p.pred, p.gt, opt.beta2), c.intersection,
                c.uni};
    total.intersection += c.intersection;
    total.uni += c.uni;
    r.miou += row.iou;
    r.mae += row.mae;
    r.max_f += row.max_f;
    r.rows.push_back(std::move(row));
  }
  const double n = static_cast<double>(pairs.size());
  r.miou /= n;
  r.mae /= n;
  r.max_f /= n;
  r.ciou = total.iou();
  return r;
}

/// Throws UnpairedFiles naming every unmatched stem.
inline EvalReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                       EvalOptions opt = {}) {
  const auto pred = masks_by_stem(pred_dir);
  const auto gt = masks_by_stem(gt_dir);
  const auto unpaired = unpaired_stems(pred, gt);
  if (!unpaired.empty()) {
    std::string list;
    for (const auto& s : unpaired) list += (list.empty() ? "" : ", ") + s;
    throw Error(ErrorCode::UnpairedFiles, "unpaired stems: " + list);
  }
  std::vector<std::pair<std::string, EvalPair>> pairs;
  for (const auto& [stem, path] : pred) pairs.push_back({stem, EvalPair{load_mask(path), load_mask(gt.at(stem))}});
  return evaluate_pairs(pairs, opt);
}

inline nlohmann::json to_json(const EvalReport& r, const EvalOptions& opt) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"stem", row.stem},
                    {"iou", row.iou},
                    {"mae", row.mae},
                    {"max_f", row.max_f},
                    {"intersection", row.intersection},
                    {"union", row.uni}});
  }
  return {{"tau", opt.tau},
          {"beta2", opt.beta2},
          {"pairs", rows},
          {"aggregate", {{"miou", r.miou}, {"ciou", r.ciou}, {"mae", r.mae}, {"max_f", r.max_f}}}};
}

}  // namespace salvs::metrics
