// Frame-level detection evaluation: IoU matching at a single threshold,
// all-point interpolated average precision, mAP over classes with ground
// truth, multi-scale/flip score merging and per-class AP-weighted
// ensembling. CSV and JSON interfaces live here too.

#pragma once

#include <map>
#include <optional>

#include "acar/roi.hpp"

namespace acar::eval {

struct ScoredDetection {
    DetectionBox box;
    int class_id = 0;
    double score = 0.0;
};

struct ClassCounts {
    std::size_t tp = 0, fp = 0, gt = 0;
};

struct EvalReport {
    std::map<int, double> per_class_ap;  // classes without ground truth are absent
    double map_value = 0.0;
    std::map<int, ClassCounts> counts;
};

struct GroundTruth {
    DetectionBox box;
    std::vector<std::uint8_t> labels;
};

// Frames are keyed by (video_id, timestamp in integer milliseconds).
using FrameKey = std::pair<std::string, std::int64_t>;

inline FrameKey frame_key(const std::string& video_id, double timestamp) {
    return {video_id, static_cast<std::int64_t>(std::llround(timestamp * 1000.0))};
}

double iou(const DetectionBox& a, const DetectionBox& b);

// Greedy matching in descending score order (stable on ties); a detection
// is a true positive if its best-IoU unmatched ground truth in the same
// frame reaches the threshold. Equal-IoU ties go to the lower GT index.
// AP integrates the all-point interpolated precision envelope.
double average_precision(std::vector<ScoredDetection> dets,
                         const std::map<FrameKey, std::vector<DetectionBox>>& gts_by_frame,
                         double iou_thresh = 0.5, ClassCounts* counts = nullptr);

// Mean over classes that have ground truth; throws when none do.
double mean_ap(const std::map<int, double>& per_class_ap);

EvalReport evaluate(const std::vector<ScoredDetection>& dets, const std::vector<GroundTruth>& gts,
                    std::size_t num_classes, double iou_thresh = 0.5);

// Arithmetic mean of per-actor/per-class score matrices from the
// scale x flip test-time augmentation runs.
using ScoreMatrix = std::vector<std::vector<double>>;
ScoreMatrix merge_multiscale_flip(const std::vector<ScoreMatrix>& score_sets);

// Per-class AP-weighted score fusion: combined = sum_m w_m s_m / sum_m w_m
// with w_m = AP of model m on this class; all-zero APs fall back to
// uniform weights.
std::vector<double> ensemble_scores(const std::vector<double>& model_aps,
                                    const std::vector<std::vector<double>>& model_scores);

enum class DetectionSource { AvaLike, KineticsLike };

std::vector<DetectionBox> threshold_detections(const std::vector<DetectionBox>& dets, DetectionSource source,
                                               double ava_threshold = 0.7, double kinetics_threshold = 0.65);

// --- files ---------------------------------------------------------------

// Result CSV: video_id,timestamp,x1,y1,x2,y2,class_id,score per row, no
// header, sorted by (video_id, timestamp, class_id, descending score).
// Floating-point fields use shortest round-trip formatting.
void write_results_csv(const std::string& path, std::vector<ScoredDetection> dets);
std::vector<ScoredDetection> read_results_csv(const std::string& path);

// Detection CSV: same layout without the class_id column.
void write_detections_csv(const std::string& path, std::vector<DetectionBox> dets);
std::vector<DetectionBox> read_detections_csv(const std::string& path);

std::string report_to_json(const EvalReport& report, const std::vector<std::string>& class_names = {});
EvalReport report_from_json(const std::string& text);
std::string report_to_table(const EvalReport& report, const std::vector<std::string>& class_names = {});

}  // namespace acar::eval
