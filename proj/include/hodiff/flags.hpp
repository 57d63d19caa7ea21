#pragma once

#include <stdexcept>
#include <string>

namespace hodiff {

enum class CentroidSource { predicted, ground_truth, none };

/// Switches realizing the ablation grid. Training reads centroid_fixing and
/// the stream/loss toggles; centroid_source only matters when sampling.
struct AblationFlags {
  bool centroid_fixing = true;
  CentroidSource centroid_source = CentroidSource::predicted;
  bool semantic = true;
  bool geometric = true;
  bool dual_stream = true;
  bool mask_loss = true;

  /// Hand vertices enter the denoiser as extra rows of the semantic stream;
  /// without that stream they have no carrier.
  bool hand_rows_active() const { return semantic; }
};

inline const char* to_string(CentroidSource s) {
  switch (s) {
    case CentroidSource::predicted: return "predicted";
    case CentroidSource::ground_truth: return "ground_truth";
    case CentroidSource::none: return "none";
  }
  return "?";
}

inline CentroidSource centroid_source_from_string(const std::string& s) {
  if (s == "predicted") return CentroidSource::predicted;
  if (s == "ground_truth") return CentroidSource::ground_truth;
  if (s == "none") return CentroidSource::none;
  throw std::invalid_argument("unknown centroid source: " + s);
}

/// Named rows of the ablation grid mapped onto flag combinations. Rows share
/// the same training recipe when only sampling-time flags differ.
inline AblationFlags ablation_row(const std::string& row) {
  AblationFlags f;  // A0: everything on
  if (row == "A0") return f;
  if (row == "B0") {
    f.mask_loss = false;
    return f;
  }
  if (row == "C0") {
    f.mask_loss = false;
    f.dual_stream = false;
    return f;
  }
  if (row == "D0" || row == "D1" || row == "D2") {
    f.mask_loss = false;
    f.dual_stream = false;
    f.semantic = (row == "D2");
    f.geometric = (row == "D1");
    return f;
  }
  if (row == "E0" || row == "F0") {
    f.mask_loss = false;
    f.dual_stream = false;
    f.semantic = false;
    f.geometric = false;
    f.centroid_fixing = false;
    f.centroid_source = (row == "F0") ? CentroidSource::ground_truth : CentroidSource::predicted;
    return f;
  }
  if (row == "E1") {
    f.mask_loss = false;
    f.dual_stream = false;
    f.semantic = false;
    f.geometric = false;
    f.centroid_source = CentroidSource::none;
    return f;
  }
  throw std::invalid_argument("unknown ablation row: " + row);
}

}  // namespace hodiff
