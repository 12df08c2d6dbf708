#include "depthfake/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "depthfake/errors.hpp"
#include "depthfake/nn/weights.hpp"

namespace fs = std::filesystem;

namespace depthfake::eval {

const std::vector<std::string>& bucket_order() {
  static const std::vector<std::string> order = {"DF", "F2F", "FS", "NT", kFull};
  return order;
}

Label decide(double score, double threshold) {
  return score >= threshold ? Label::Fake : Label::Real;
}

namespace {

// Buckets a (label, class) item contributes to.
std::vector<std::string> buckets_of(Label truth, ManipulationClass cls,
                                    const std::set<ManipulationClass>& fake_classes) {
  std::vector<std::string> out;
  if (truth == Label::Real) {
    for (auto c : fake_classes) out.emplace_back(to_string(c));
  } else {
    out.emplace_back(to_string(cls));
  }
  out.emplace_back(kFull);
  return out;
}

template <typename Item, typename Truth, typename Class, typename Guess>
std::map<std::string, Tally> tally(const std::vector<Item>& items, Truth truth, Class cls, Guess guess) {
  std::set<ManipulationClass> fakes;
  for (const auto& it : items) {
    if (truth(it) == Label::Fake) fakes.insert(cls(it));
  }
  std::map<std::string, Tally> out;
  for (const auto& it : items) {
    const bool ok = guess(it) == truth(it);
    for (const auto& b : buckets_of(truth(it), cls(it), fakes)) {
      auto& t = out[b];
      ++t.total;
      if (ok) ++t.correct;
    }
  }
  return out;
}

std::map<std::string, double> percents(const std::map<std::string, Tally>& tallies) {
  std::map<std::string, double> out;
  for (const auto& [k, t] : tallies) {
    if (t.total > 0) out[k] = t.percent();
  }
  return out;
}

}  // namespace

std::map<std::string, Tally> frame_tallies(const std::vector<Prediction>& predictions, double threshold) {
  return tally(
      predictions, [](const Prediction& p) { return p.record.label; },
      [](const Prediction& p) { return p.record.manipulation; },
      [&](const Prediction& p) { return decide(p.score, threshold); });
}

std::map<std::string, double> frame_accuracy(const std::vector<Prediction>& predictions, double threshold) {
  return percents(frame_tallies(predictions, threshold));
}

Label video_vote(const std::vector<Label>& votes) {
  if (votes.empty()) throw ConfigError("cannot vote over an empty frame list");
  const auto fakes = std::ranges::count(votes, Label::Fake);
  return 2 * fakes >= static_cast<std::ptrdiff_t>(votes.size()) ? Label::Fake : Label::Real;
}

std::vector<VideoOutcome> video_outcomes(const std::vector<Prediction>& predictions, double threshold) {
  std::map<std::string, std::pair<VideoOutcome, std::vector<Label>>> by_video;
  for (const auto& p : predictions) {
    auto& [outcome, votes] = by_video[p.record.video_id];
    if (votes.empty()) {
      outcome.video_id = p.record.video_id;
      outcome.manipulation = p.record.manipulation;
      outcome.truth = p.record.label;
    } else if (outcome.truth != p.record.label || outcome.manipulation != p.record.manipulation) {
      throw ConfigError(fmt::format("video '{}' mixes labels or classes", p.record.video_id));
    }
    votes.push_back(decide(p.score, threshold));
  }
  std::vector<VideoOutcome> out;
  for (auto& [id, entry] : by_video) {
    entry.first.voted = video_vote(entry.second);
    entry.first.frames = entry.second.size();
    out.push_back(entry.first);
  }
  return out;
}

std::map<std::string, Tally> video_tallies(const std::vector<Prediction>& predictions, double threshold) {
  return tally(
      video_outcomes(predictions, threshold), [](const VideoOutcome& v) { return v.truth; },
      [](const VideoOutcome& v) { return v.manipulation; }, [](const VideoOutcome& v) { return v.voted; });
}

std::map<std::string, double> video_accuracy(const std::vector<Prediction>& predictions, double threshold) {
  return percents(video_tallies(predictions, threshold));
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"schema_version", r.schema_version},
       {"backbone", std::string(to_string(r.backbone))},
       {"config", std::string(to_string(r.config))},
       {"frame_accuracy", r.frame_accuracy},
       {"video_accuracy", r.video_accuracy},
       {"n_frames", r.n_frames},
       {"n_videos", r.n_videos},
       {"threshold", r.threshold},
       {"tie_rule", "score >= threshold and vote ties resolve to FAKE"},
       {"config_hash", r.config_hash},
       {"checkpoint", r.checkpoint}};
  if (r.baseline_config) {
    j["baseline_config"] = std::string(to_string(*r.baseline_config));
    j["frame_deltas"] = r.frame_deltas;
    j["video_deltas"] = r.video_deltas;
    j["candidate_means"] = r.candidate_means;
  }
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kReportSchemaVersion) {
    throw ConfigError(fmt::format("unsupported report schema version {}", r.schema_version));
  }
  r.backbone = parse_backbone(j.at("backbone").get<std::string>());
  r.config = parse_channel_config(j.at("config").get<std::string>());
  r.frame_accuracy = j.at("frame_accuracy").get<std::map<std::string, double>>();
  r.video_accuracy = j.value("video_accuracy", std::map<std::string, double>{});
  r.n_frames = j.value("n_frames", std::int64_t{0});
  r.n_videos = j.value("n_videos", std::int64_t{0});
  r.threshold = j.value("threshold", kDefaultThreshold);
  r.config_hash = j.value("config_hash", std::string());
  r.checkpoint = j.value("checkpoint", std::string());
  if (j.contains("baseline_config")) {
    r.baseline_config = parse_channel_config(j.at("baseline_config").get<std::string>());
    r.frame_deltas = j.value("frame_deltas", std::map<std::string, double>{});
    r.video_deltas = j.value("video_deltas", std::map<std::string, double>{});
    r.candidate_means = j.value("candidate_means", std::map<std::string, double>{});
  }
  for (const auto* m : {&r.frame_accuracy, &r.video_accuracy}) {
    for (const auto& [k, v] : *m) {
      if (!(v >= 0.0 && v <= 100.0)) throw ConfigError(fmt::format("accuracy '{}' outside [0, 100]", k));
    }
  }
}

EvalReport make_report(const std::vector<Prediction>& predictions, Backbone backbone,
                       ChannelConfig config, double threshold) {
  EvalReport r;
  r.backbone = backbone;
  r.config = config;
  r.threshold = threshold;
  r.frame_accuracy = frame_accuracy(predictions, threshold);
  r.video_accuracy = video_accuracy(predictions, threshold);
  r.n_frames = static_cast<std::int64_t>(predictions.size());
  r.n_videos = static_cast<std::int64_t>(video_outcomes(predictions, threshold).size());
  return r;
}

namespace {

std::map<std::string, double> deltas(const std::map<std::string, double>& a,
                                     const std::map<std::string, double>& b, const char* what) {
  std::set<std::string> ka;
  std::set<std::string> kb;
  for (const auto& [k, v] : a) ka.insert(k);
  for (const auto& [k, v] : b) kb.insert(k);
  if (ka != kb) throw ConfigError(fmt::format("{} buckets differ between report and baseline", what));
  std::map<std::string, double> out;
  for (const auto& [k, v] : a) out[k] = v - b.at(k);
  return out;
}

}  // namespace

EvalReport compare_reports(const EvalReport& report, const EvalReport& baseline) {
  EvalReport out = report;
  out.baseline_config = baseline.config;
  out.frame_deltas = deltas(report.frame_accuracy, baseline.frame_accuracy, "frame");
  out.video_deltas = deltas(report.video_accuracy, baseline.video_accuracy, "video");
  out.candidate_means.clear();
  double fake_sum = 0.0;
  int fake_n = 0;
  double all_sum = 0.0;
  for (const auto& [k, d] : out.frame_deltas) {
    all_sum += d;
    if (k != kFull) {
      fake_sum += d;
      ++fake_n;
    }
  }
  if (fake_n > 0) out.candidate_means["mean_fake_classes"] = fake_sum / fake_n;
  if (!out.frame_deltas.empty()) {
    out.candidate_means["mean_all_buckets"] = all_sum / static_cast<double>(out.frame_deltas.size());
  }
  return out;
}

std::string format_cell(double value, std::optional<double> delta) {
  std::string s = fmt::format("{:.2f}", value);
  if (delta) {
    // Round first so a tiny negative delta does not print as "-0.00".
    const double d = std::round(*delta * 100.0) / 100.0;
    s += fmt::format(" ({}{:.2f})", d >= 0.0 ? "+" : "", d == 0.0 ? 0.0 : d);
  }
  return s;
}

std::string markdown_table(const std::vector<EvalReport>& reports, bool video_level) {
  std::string out = "| Class |";
  std::string rule = "|---|";
  for (const auto& r : reports) {
    out += fmt::format(" {} {} |", to_string(r.backbone), to_string(r.config));
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  for (const auto& bucket : bucket_order()) {
    bool any = false;
    std::string row = fmt::format("| {} |", bucket);
    for (const auto& r : reports) {
      const auto& acc = video_level ? r.video_accuracy : r.frame_accuracy;
      const auto& del = video_level ? r.video_deltas : r.frame_deltas;
      const auto it = acc.find(bucket);
      if (it == acc.end()) {
        row += " - |";
        continue;
      }
      any = true;
      const auto d = del.find(bucket);
      row += " " + format_cell(it->second, d == del.end() ? std::nullopt : std::optional(d->second)) + " |";
    }
    if (any) out += row + "\n";
  }
  return out;
}

void write_report(const fs::path& file, const EvalReport& report) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  nn::atomic_write(file, nlohmann::json(report).dump(2) + "\n");
}

EvalReport read_report(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingResource(fmt::format("cannot open report '{}'", file.string()));
  return nlohmann::json::parse(in).get<EvalReport>();
}

std::vector<PlotRow> emit_plots(const std::vector<EvalReport>& reports, const fs::path& out_dir) {
  if (reports.empty()) throw ConfigError("no reports to plot");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw Error(fmt::format("cannot create plot directory '{}'", out_dir.string()));
  }

  std::vector<std::string> buckets;
  for (const auto& b : bucket_order()) {
    if (std::ranges::any_of(reports, [&](const auto& r) { return r.frame_accuracy.contains(b); })) {
      buckets.push_back(b);
    }
  }
  std::vector<PlotRow> rows;
  for (const auto& b : buckets) {
    for (const auto& r : reports) {
      const auto it = r.frame_accuracy.find(b);
      if (it == r.frame_accuracy.end()) continue;
      rows.push_back({b, std::string(to_string(r.config)), std::string(to_string(r.backbone)), it->second});
    }
  }

  std::string csv = "bucket,config,backbone,frame_accuracy\n";
  for (const auto& row : rows) {
    csv += fmt::format("{},{},{},{:.17g}\n", row.bucket, row.config, row.backbone, row.frame_accuracy);
  }
  nn::atomic_write(out_dir / "accuracy.csv", csv);

  const int series = static_cast<int>(reports.size());
  const int bar_w = 18;
  const int group_w = series * bar_w + 30;
  const int left = 60;
  const int top = 30;
  const int plot_h = 300;
  const int legend_h = 20 * series + 10;
  const int width = left + group_w * static_cast<int>(buckets.size()) + 20;
  const int height = top + plot_h + 40 + legend_h;
  cv::Mat img(height, std::max(width, 320), CV_8UC3, cv::Scalar(255, 255, 255));
  static const cv::Scalar palette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44},
                                       {40, 39, 214},  {189, 103, 148}, {75, 86, 140}};
  const auto y_of = [&](double pct) { return top + plot_h - static_cast<int>(std::lround(pct / 100.0 * plot_h)); };
  for (int tick = 0; tick <= 100; tick += 20) {
    const int y = y_of(tick);
    cv::line(img, {left, y}, {img.cols - 10, y}, cv::Scalar(220, 220, 220), 1);
    cv::putText(img, std::to_string(tick), {10, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
  }
  for (std::size_t g = 0; g < buckets.size(); ++g) {
    const int gx = left + static_cast<int>(g) * group_w + 15;
    for (int s = 0; s < series; ++s) {
      const auto it = reports[s].frame_accuracy.find(buckets[g]);
      if (it == reports[s].frame_accuracy.end()) continue;
      const int x = gx + s * bar_w;
      cv::rectangle(img, cv::Point(x, y_of(it->second)), cv::Point(x + bar_w - 3, y_of(0)),
                    palette[s % std::size(palette)], cv::FILLED);
    }
    cv::putText(img, buckets[g], {gx, top + plot_h + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1);
  }
  cv::line(img, {left, y_of(0)}, {img.cols - 10, y_of(0)}, cv::Scalar(0, 0, 0), 1);
  for (int s = 0; s < series; ++s) {
    const int y = top + plot_h + 40 + 20 * s;
    cv::rectangle(img, cv::Point(left, y), cv::Point(left + 12, y + 12), palette[s % std::size(palette)], cv::FILLED);
    cv::putText(img, fmt::format("{} {}", to_string(reports[s].backbone), to_string(reports[s].config)),
                {left + 20, y + 11}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1);
  }
  const fs::path png = out_dir / "accuracy.png";
  if (!cv::imwrite(png.string(), img)) throw Error(fmt::format("cannot write '{}'", png.string()));
  return rows;
}

std::vector<PlotRow> read_plot_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingResource(fmt::format("cannot open '{}'", file.string()));
  std::string line;
  std::getline(in, line);
  std::vector<PlotRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    PlotRow r;
    std::string value;
    std::getline(ss, r.bucket, ',');
    std::getline(ss, r.config, ',');
    std::getline(ss, r.backbone, ',');
    std::getline(ss, value, ',');
    r.frame_accuracy = std::stod(value);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace depthfake::eval
