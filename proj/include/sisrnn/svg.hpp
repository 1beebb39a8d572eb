#pragma once

#include <string>
#include <utility>
#include <vector>

namespace sisrnn {

/// Standalone vector plots; no display dependency.

void write_histogram_svg(const std::string& path, const std::vector<double>& edges,
                         const std::vector<double>& counts, const std::string& title);

void write_line_svg(const std::string& path, const std::vector<double>& xs,
                    const std::vector<std::pair<std::string, std::vector<double>>>& series,
                    const std::string& title);

}  // namespace sisrnn
