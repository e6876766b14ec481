#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stan/train/experiment.hpp"

namespace stan {

// Text tables: video classification F1 per model and view; frame
// identification F1 for each gradient method; short vs long sequences.
std::string render_tables(const std::vector<CellResult>& cells, std::size_t num_classes, const std::string& title);

// report.txt, report.json (summary, config, split, runs), cells.csv, and
// raw/<cell>.frames.csv + raw/<cell>.videos.csv per cell.
void write_report(const std::filesystem::path& dir, const MetricsReport& report);

// Delimited raw predictions, one row per frame / per video.
std::string frames_csv(const CellResult& cell);
std::string videos_csv(const CellResult& cell);

// Merges every report.json found under `runs` (recursively, sorted by path)
// into one set of tables.
std::string consolidate_reports(const std::filesystem::path& runs);

}  // namespace stan
