#pragma once
// Minimal line-plot writer for report figures.

#include <filesystem>
#include <string>
#include <vector>

namespace hsrgan::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 420;
};

void write_line_plot(const std::filesystem::path& path, const PlotSpec& spec, const std::vector<Series>& series);

}  // namespace hsrgan::cli
