#include "hetpeer/panel_io.hpp"

#include "hetpeer/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>
#include <unordered_map>

namespace hetpeer {

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.emplace_back(line.substr(start));
            break;
        }
        fields.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

double parse_double(const std::string& text, const std::string& context) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || text.empty()) {
        throw ValidationError(context + ": non-numeric value '" + text + "'");
    }
    if (!std::isfinite(value)) throw ValidationError(context + ": non-finite value '" + text + "'");
    return value;
}

void check_identifier(const std::string& id) {
    if (id.empty() || id.find_first_of(",\"\r\n") != std::string::npos) {
        throw ValidationError("identifier '" + id + "' is empty or contains a reserved character");
    }
}

struct GroupBuilder {
    std::string id;
    std::vector<std::string> individual_ids;
    std::unordered_map<std::string, int> index_of;
    std::vector<double> y;
    std::vector<std::vector<double>> x;
    Network influencers;
};

} // namespace

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

Panel load_panel(std::istream& nodes, std::istream& edges) {
    std::string line;
    if (!std::getline(nodes, line)) throw ValidationError("nodes: missing header");
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "group_id" || header[1] != "individual_id" ||
        header[2] != "y") {
        throw ValidationError("nodes: header must start with group_id,individual_id,y");
    }
    const std::size_t p = header.size() - 3;
    for (std::size_t k = 0; k < p; ++k) {
        if (header[3 + k] != "x_" + std::to_string(k + 1)) {
            throw ValidationError("nodes: expected column x_" + std::to_string(k + 1));
        }
    }

    std::vector<GroupBuilder> builders;
    std::unordered_map<std::string, std::size_t> group_index;
    std::size_t line_no = 1;
    while (std::getline(nodes, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::string context = "nodes line " + std::to_string(line_no);
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ValidationError(context + ": expected " + std::to_string(header.size()) +
                                  " fields, found " + std::to_string(fields.size()));
        }
        check_identifier(fields[0]);
        check_identifier(fields[1]);
        auto [it, inserted] = group_index.try_emplace(fields[0], builders.size());
        if (inserted) builders.push_back(GroupBuilder{fields[0], {}, {}, {}, {}, {}});
        auto& b = builders[it->second];
        if (b.index_of.count(fields[1]) != 0) {
            throw ValidationError(context + ": duplicate individual id " + fields[1] +
                                  " in group " + fields[0]);
        }
        if (fields[2] != "0" && fields[2] != "1") {
            throw ValidationError(context + ": y must be 0 or 1, found '" + fields[2] + "'");
        }
        b.index_of.emplace(fields[1], static_cast<int>(b.individual_ids.size()));
        b.individual_ids.push_back(fields[1]);
        b.y.push_back(fields[2] == "1" ? 1.0 : 0.0);
        std::vector<double> row(p);
        for (std::size_t k = 0; k < p; ++k) row[k] = parse_double(fields[3 + k], context);
        b.x.push_back(std::move(row));
        b.influencers.emplace_back();
    }

    if (!std::getline(edges, line)) throw ValidationError("edges: missing header");
    {
        const auto eh = split_csv_line(line);
        if (eh.size() != 3 || eh[0] != "group_id" || eh[1] != "from_id" || eh[2] != "to_id") {
            throw ValidationError("edges: header must be group_id,from_id,to_id");
        }
    }
    line_no = 1;
    while (std::getline(edges, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::string context = "edges line " + std::to_string(line_no);
        const auto fields = split_csv_line(line);
        if (fields.size() != 3) throw ValidationError(context + ": expected 3 fields");
        const auto g = group_index.find(fields[0]);
        if (g == group_index.end()) {
            throw ValidationError(context + ": unknown group " + fields[0]);
        }
        auto& b = builders[g->second];
        const auto from = b.index_of.find(fields[1]);
        const auto to = b.index_of.find(fields[2]);
        if (from == b.index_of.end() || to == b.index_of.end()) {
            throw ValidationError(context + ": edge references unknown individual in group " +
                                  fields[0]);
        }
        if (from->second == to->second) {
            throw ValidationError(context + ": self-link for individual " + fields[1]);
        }
        b.influencers[static_cast<std::size_t>(from->second)].push_back(to->second);
    }

    std::vector<GroupData> groups;
    groups.reserve(builders.size());
    for (auto& b : builders) {
        const auto n = static_cast<Eigen::Index>(b.y.size());
        Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(b.y.data(), n);
        Eigen::MatrixXd x(n, static_cast<Eigen::Index>(p));
        for (Eigen::Index i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < p; ++k) {
                x(i, static_cast<Eigen::Index>(k)) = b.x[static_cast<std::size_t>(i)][k];
            }
        }
        groups.emplace_back(std::move(b.id), std::move(b.individual_ids), std::move(y),
                            std::move(x), std::move(b.influencers));
    }
    return Panel(std::move(groups), static_cast<int>(p));
}

void save_panel(const Panel& panel, std::ostream& nodes, std::ostream& edges) {
    const int p = panel.covariate_dim();
    nodes << "group_id,individual_id,y";
    for (int k = 1; k <= p; ++k) nodes << ",x_" << k;
    nodes << '\n';
    edges << "group_id,from_id,to_id\n";
    for (const auto& g : panel.groups()) {
        check_identifier(g.id());
        const auto& ids = g.individual_ids();
        for (int i = 0; i < g.size(); ++i) {
            check_identifier(ids[static_cast<std::size_t>(i)]);
            nodes << g.id() << ',' << ids[static_cast<std::size_t>(i)] << ','
                  << (g.y()[i] == 1.0 ? '1' : '0');
            for (int k = 0; k < p; ++k) nodes << ',' << format_double(g.x()(i, k));
            nodes << '\n';
            for (int j : g.influencers()[static_cast<std::size_t>(i)]) {
                edges << g.id() << ',' << ids[static_cast<std::size_t>(i)] << ','
                      << ids[static_cast<std::size_t>(j)] << '\n';
            }
        }
    }
    if (!nodes || !edges) throw IoError("failed writing panel CSV");
}

Panel load_panel(const std::filesystem::path& nodes, const std::filesystem::path& edges) {
    std::ifstream n(nodes);
    if (!n) throw IoError("cannot open nodes file " + nodes.string());
    std::ifstream e(edges);
    if (!e) throw IoError("cannot open edges file " + edges.string());
    return load_panel(n, e);
}

void save_panel(const Panel& panel, const std::filesystem::path& nodes,
                const std::filesystem::path& edges) {
    std::ofstream n(nodes);
    if (!n) throw IoError("cannot open " + nodes.string() + " for writing");
    std::ofstream e(edges);
    if (!e) throw IoError("cannot open " + edges.string() + " for writing");
    save_panel(panel, n, e);
    n.close();
    e.close();
    if (!n || !e) throw IoError("failed writing panel CSV");
}

} // namespace hetpeer
