#include "stan/train/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "stan/errors.hpp"
#include "stan/serialize.hpp"

namespace stan {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> widths(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], r[c].size());
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        os << (c ? "  " : "") << (c + 1 < cells.size() ? pad(cells[c], widths[c]) : cells[c]);
      }
      os << "\n";
    };
    line(header);
    std::size_t total = 0;
    for (auto w : widths) total += w + 2;
    os << std::string(total - 2, '-') << "\n";
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::string render_tables(const std::vector<CellResult>& cells, std::size_t num_classes, const std::string& title) {
  std::ostringstream os;
  os << title << "\n\n";

  // Video classification: one row per (model, view, length); the method does
  // not change the classifier, so take the first cell of each group.
  {
    Table t;
    t.header = {"model", "view", "length"};
    for (std::size_t k = 0; k < num_classes; ++k) t.header.push_back("class " + std::to_string(k));
    t.header.push_back("overall");
    std::vector<std::string> seen;
    for (const auto& c : cells) {
      const std::string key = to_string(c.key.model) + "|" + to_string(c.key.view) + "|" + to_string(c.key.length);
      if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
      seen.push_back(key);
      std::vector<std::string> row{to_string(c.key.model), to_string(c.key.view), to_string(c.key.length)};
      for (std::size_t k = 0; k < num_classes; ++k) {
        row.push_back(k < c.video.per_class.size() ? fixed(c.video.per_class[k]) : "-");
      }
      row.push_back(fixed(c.video.micro));
      t.rows.push_back(std::move(row));
    }
    os << "Video classification F1\n" << t.render() << "\n";
  }

  for (auto method : {SaliencyMethod::Vanilla, SaliencyMethod::SmoothGrad, SaliencyMethod::GradCam}) {
    Table t;
    t.header = {"model", "view", "length"};
    for (std::size_t k = 0; k < num_classes; ++k) t.header.push_back("class " + std::to_string(k));
    for (const char* h : {"overall", "always-positive", "mean theta"}) t.header.push_back(h);
    for (const auto& c : cells) {
      if (c.key.method != method) continue;
      std::vector<std::string> row{to_string(c.key.model), to_string(c.key.view), to_string(c.key.length)};
      for (std::size_t k = 0; k < num_classes; ++k) {
        row.push_back(k < c.frame_f1_per_class.size() ? fixed(c.frame_f1_per_class[k]) : "-");
      }
      row.push_back(fixed(c.frame_f1));
      row.push_back(fixed(c.always_positive_f1));
      row.push_back(fixed(mean(c.thresholds), 2));
      t.rows.push_back(std::move(row));
    }
    if (t.rows.empty()) continue;
    os << "Frame identification F1, " << to_string(method) << "\n" << t.render() << "\n";
  }

  {
    Table t;
    t.header = {"model", "view", "method", "short frame F1", "long frame F1", "short video F1", "long video F1"};
    std::map<std::tuple<int, int, int>, std::pair<const CellResult*, const CellResult*>> pairs;
    std::vector<std::tuple<int, int, int>> order;
    for (const auto& c : cells) {
      const auto key = std::make_tuple(static_cast<int>(c.key.model), static_cast<int>(c.key.view),
                                       static_cast<int>(c.key.method));
      if (!pairs.count(key)) order.push_back(key);
      auto& slot = pairs[key];
      (c.key.length == SequenceLength::Short ? slot.first : slot.second) = &c;
    }
    for (const auto& key : order) {
      const auto [s, l] = pairs[key];
      if (!s || !l) continue;
      t.rows.push_back({to_string(s->key.model), to_string(s->key.view), to_string(s->key.method),
                        fixed(s->frame_f1), fixed(l->frame_f1), fixed(s->video.micro), fixed(l->video.micro)});
    }
    if (!t.rows.empty()) os << "Short vs long sequences\n" << t.render() << "\n";
  }
  return os.str();
}

std::string frames_csv(const CellResult& cell) {
  std::ostringstream os;
  os << "fold,clip,frame,label,score,predicted\n";
  for (const auto& f : cell.frames) {
    os << f.fold << ',' << f.clip << ',' << f.frame << ',' << int(f.label) << ',' << exact(f.score) << ','
       << int(f.predicted) << '\n';
  }
  return os.str();
}

std::string videos_csv(const CellResult& cell) {
  std::ostringstream os;
  os << "fold,clip,label,predicted\n";
  for (const auto& v : cell.videos) os << v.fold << ',' << v.clip << ',' << v.label << ',' << v.predicted << '\n';
  return os.str();
}

void write_report(const std::filesystem::path& dir, const MetricsReport& report) {
  std::filesystem::create_directories(dir / "raw");
  nlohmann::json j;
  j["format"] = "stan-report";
  j["version"] = 1;
  j["dataset_id"] = report.dataset_id;
  j["num_classes"] = report.num_classes;
  j["clip_frames"] = report.clip_frames;
  j["config"] = report.config;
  j["split"] = report.split;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : report.cells) j["cells"].push_back(c.summary_json());
  j["runs"] = nlohmann::json::array();
  for (const auto& r : report.runs) j["runs"].push_back(r.to_json());

  std::ostringstream cells;
  cells << "model,view,method,length,video_f1,video_f1_macro,frame_f1,always_positive_f1,frames,thresholds";
  for (std::size_t k = 0; k < report.num_classes; ++k) cells << ",video_f1_class" << k;
  for (std::size_t k = 0; k < report.num_classes; ++k) cells << ",frame_f1_class" << k;
  cells << "\n";
  for (const auto& c : report.cells) {
    cells << to_string(c.key.model) << ',' << to_string(c.key.view) << ',' << to_string(c.key.method) << ','
          << to_string(c.key.length) << ',' << exact(c.video.micro) << ',' << exact(c.video.macro) << ','
          << exact(c.frame_f1) << ',' << exact(c.always_positive_f1) << ',' << c.frames_evaluated << ',';
    for (std::size_t f = 0; f < c.thresholds.size(); ++f) cells << (f ? ";" : "") << fixed(c.thresholds[f], 2);
    for (double v : c.video.per_class) cells << ',' << exact(v);
    for (double v : c.frame_f1_per_class) cells << ',' << exact(v);
    cells << "\n";
  }

  for (const auto& c : report.cells) {
    write_file_atomic(dir / "raw" / (c.key.id() + ".frames.csv"), frames_csv(c));
    write_file_atomic(dir / "raw" / (c.key.id() + ".videos.csv"), videos_csv(c));
  }
  write_file_atomic(dir / "cells.csv", cells.str());
  write_file_atomic(dir / "report.json", j.dump(2) + "\n");
  write_file_atomic(dir / "report.txt", render_tables(report.cells, report.num_classes, "Dataset " + report.dataset_id));
}

std::string consolidate_reports(const std::filesystem::path& runs) {
  if (!std::filesystem::is_directory(runs)) {
    throw StanError(ErrorCategory::Io, "runs directory " + runs.string() + " does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(runs)) {
    if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw StanError(ErrorCategory::Io, "no report.json under " + runs.string());
  std::ostringstream os;
  for (const auto& f : files) {
    nlohmann::json j;
    std::vector<CellResult> cells;
    try {
      j = nlohmann::json::parse(read_file(f));
      for (const auto& c : j.at("cells")) cells.push_back(CellResult::from_summary_json(c));
    } catch (const std::exception& ex) {
      throw StanError(ErrorCategory::Io, f.string() + ": not a readable report (" + ex.what() + ")");
    }
    const auto rel = std::filesystem::relative(f.parent_path(), runs).generic_string();
    os << render_tables(cells, j.at("num_classes").get<std::size_t>(),
                        "Run " + rel + " (dataset " + j.at("dataset_id").get<std::string>() + ")");
  }
  return os.str();
}

}  // namespace stan
