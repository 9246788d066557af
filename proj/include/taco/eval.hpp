#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "taco/detector.hpp"
#include "taco/render_map.hpp"
#include "taco/scene.hpp"

namespace taco::eval {

/// One line of a detection dump: "image_id class cx cy w h confidence".
struct DumpEntry {
    int image_id = 0;
    int cls = 0;
    Box box;
    double confidence = 0.0;
};

struct GroundTruth {
    int image_id = 0;
    Box box;
    std::vector<Box> ignore;  // other labeled objects; unmatched detections on them are not counted
};

void write_dump(std::ostream& out, std::span<const DumpEntry> entries);
void write_dump(const std::filesystem::path& path, std::span<const DumpEntry> entries);
/// Blank lines and lines starting with '#' are skipped. Throws FormatError
/// with the line number on malformed input.
std::vector<DumpEntry> read_dump(std::istream& in);
std::vector<DumpEntry> read_dump(const std::filesystem::path& path);

/// One entry per detection, labeled with its best class.
std::vector<DumpEntry> to_dump(int image_id, std::span<const detector::Detection> dets);

struct EvalSettings {
    double conf_floor = 0.05;
    double nms_iou = 0.45;
    double match_iou = 0.5;
    double adr_conf = 0.25;
    std::vector<int> classes{detector::kTruck, detector::kCarLike};  // merged for metrics
};

struct PrPoint {
    double precision = 0.0;
    double recall = 0.0;
};

/// Precision/recall after each counted detection, ranked by descending
/// confidence (ties by input order). Every class is ranked; only classes in
/// the merge set can match a gt, and each gt is matched at most once. A
/// detection with IoU below the threshold against its gt but at or above it
/// against an ignore box is skipped; everything else unmatched is a false
/// positive. Since skipping depends on geometry only, a larger merge set
/// never lowers AP.
std::vector<PrPoint> pr_curve(std::span<const DumpEntry> entries, std::span<const GroundTruth> gts,
                              double iou_thresh, std::span<const int> classes);

/// All-point interpolated area under the PR curve. Throws ConfigError when
/// `gts` is empty.
double average_precision(std::span<const DumpEntry> entries, std::span<const GroundTruth> gts, double iou_thresh = 0.5,
                         std::span<const int> classes = {});

/// Fraction of gt images with at least one merged-class detection of
/// confidence >= conf_thresh and IoU >= iou_thresh.
double adr(std::span<const DumpEntry> entries, std::span<const GroundTruth> gts, double conf_thresh,
           double iou_thresh = 0.5, std::span<const int> classes = {});

std::vector<GroundTruth> ground_truth(std::span<const scene::SceneSample* const> samples);

/// Renders every sample with `texture`, detects and applies NMS.
std::vector<DumpEntry> run_detector(std::span<const scene::SceneSample* const> samples,
                                    const render::TextureMap& texture, const detector::DetectorModel& det,
                                    const EvalSettings& settings = {}, int threads = 1);

struct TextureRow {
    std::string name;
    double ap = 0.0;
    double adr = 0.0;
};

std::vector<TextureRow> compare_textures(std::span<const std::pair<std::string, render::TextureMap>> textures,
                                         std::span<const scene::SceneSample* const> samples,
                                         const detector::DetectorModel& det, const EvalSettings& settings = {},
                                         int threads = 1);

std::string rows_csv(std::span<const TextureRow> rows);
std::string format_table(std::span<const TextureRow> rows);

struct Saliency {
    Image heat;          // 1 x H x W in [0,1]
    Image blocks;        // 1 x g x g raw confidence drops
    double base_score = 0.0;
    double inside_mass = 0.0;  // share of heat inside the gt box
};

/// Max truck confidence over cells whose center lies inside `gt`.
double truck_score(const Image& raw, const detector::DetectorConfig& cfg, const Box& gt);

/// Zeroes each block of a `granularity` x `granularity` partition of the
/// stage-3 feature map and records the drop in truck_score; the drops are
/// upsampled to image size and normalized to [0,1].
Saliency ablation_saliency(const Image& image, const Box& gt, const detector::DetectorModel& det, int granularity = 8);

/// Red heat blended over the image.
Image saliency_overlay(const Image& image, const Image& heat);

}  // namespace taco::eval
