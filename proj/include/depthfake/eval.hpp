#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthfake/types.hpp"

namespace depthfake::eval {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr double kDefaultThreshold = 0.5;

// Report buckets: the four fake classes (each paired with every real frame)
// and FULL (everything).
inline constexpr const char* kFull = "FULL";
const std::vector<std::string>& bucket_order();

struct Prediction {
  FrameRecord record;
  double score = 0.0;  // probability of FAKE
};

// FAKE iff score >= threshold.
Label decide(double score, double threshold = kDefaultThreshold);

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double percent() const { return total ? 100.0 * static_cast<double>(correct) / total : 0.0; }
  bool operator==(const Tally&) const = default;
};

// Buckets with no members are absent from the result.
std::map<std::string, Tally> frame_tallies(const std::vector<Prediction>& predictions,
                                           double threshold = kDefaultThreshold);
std::map<std::string, double> frame_accuracy(const std::vector<Prediction>& predictions,
                                             double threshold = kDefaultThreshold);

// Majority label; a tie goes to FAKE. Throws ConfigError on an empty list.
Label video_vote(const std::vector<Label>& votes);

struct VideoOutcome {
  std::string video_id;
  ManipulationClass manipulation = ManipulationClass::Original;
  Label truth = Label::Real;
  Label voted = Label::Real;
  std::size_t frames = 0;
};

// One outcome per video, sorted by video id.
std::vector<VideoOutcome> video_outcomes(const std::vector<Prediction>& predictions,
                                         double threshold = kDefaultThreshold);
std::map<std::string, Tally> video_tallies(const std::vector<Prediction>& predictions,
                                           double threshold = kDefaultThreshold);
std::map<std::string, double> video_accuracy(const std::vector<Prediction>& predictions,
                                             double threshold = kDefaultThreshold);

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  Backbone backbone = Backbone::TinyConv;
  ChannelConfig config = ChannelConfig::RGB;
  std::map<std::string, double> frame_accuracy;  // percent
  std::map<std::string, double> video_accuracy;  // percent
  std::int64_t n_frames = 0;
  std::int64_t n_videos = 0;
  double threshold = kDefaultThreshold;
  std::string config_hash;
  std::string checkpoint;

  // Filled by compare_reports: this minus baseline, percentage points.
  std::optional<ChannelConfig> baseline_config;
  std::map<std::string, double> frame_deltas;
  std::map<std::string, double> video_deltas;
  // Labeled aggregates of frame_deltas, e.g. "mean_fake_classes".
  std::map<std::string, double> candidate_means;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

EvalReport make_report(const std::vector<Prediction>& predictions, Backbone backbone,
                       ChannelConfig config, double threshold = kDefaultThreshold);

// Per-bucket deltas (report - baseline) and their unweighted means:
//   mean_fake_classes  over DF, F2F, FS, NT present in both
//   mean_all_buckets   over every shared bucket including FULL
// Throws ConfigError when the bucket sets differ.
EvalReport compare_reports(const EvalReport& report, const EvalReport& baseline);

// Two-decimal value with a bracketed signed delta when present: "97.76 (+0.11)".
std::string format_cell(double value, std::optional<double> delta);

// Markdown table in the classic per-class layout: one row per bucket, one
// column per report (frame accuracy, deltas in brackets).
std::string markdown_table(const std::vector<EvalReport>& reports, bool video_level = false);

void write_report(const std::filesystem::path& file, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& file);

struct PlotRow {
  std::string bucket;
  std::string config;
  std::string backbone;
  double frame_accuracy = 0.0;
};

// Grouped bar chart (bucket x config) as accuracy.png plus accuracy.csv with
// one row per plotted bar. Returns the plotted rows.
std::vector<PlotRow> emit_plots(const std::vector<EvalReport>& reports,
                                const std::filesystem::path& out_dir);
std::vector<PlotRow> read_plot_csv(const std::filesystem::path& file);

}  // namespace depthfake::eval
