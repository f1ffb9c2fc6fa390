#pragma once
#include "hetpeer/panel.hpp"

#include <filesystem>
#include <iosfwd>

namespace hetpeer {

// Nodes CSV: `group_id,individual_id,y,x_1,...,x_p`
// Edges CSV: `group_id,from_id,to_id`, where `from` is influenced by `to`.
// Groups and individuals keep their order of first appearance in the nodes
// stream. Identifiers may not contain commas, quotes or line breaks.

Panel load_panel(std::istream& nodes, std::istream& edges);
void save_panel(const Panel& panel, std::ostream& nodes, std::ostream& edges);

Panel load_panel(const std::filesystem::path& nodes, const std::filesystem::path& edges);
void save_panel(const Panel& panel, const std::filesystem::path& nodes,
                const std::filesystem::path& edges);

/// Shortest text form that parses back to the identical double.
std::string format_double(double value);

} // namespace hetpeer
