#pragma once

#include <filesystem>

namespace tdro {

// Renders a weight-trajectory CSV (step,task,weight,measurement) as a
// self-contained SVG line chart. Read-only with respect to the CSV.
void write_trajectory_svg(const std::filesystem::path& csv_path,
                          const std::filesystem::path& svg_path);

}  // namespace tdro
