#include "nkscreen/grid_model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_set>

#include "nkscreen/errors.hpp"
#include "nkscreen/union_find.hpp"

namespace nkscreen {

int NetworkCase::bus_index(int bus_id) const {
    for (int i = 0; i < bus_count(); ++i)
        if (buses[i].id == bus_id) return i;
    throw ValidationError("unknown bus id " + std::to_string(bus_id));
}

int NetworkCase::slack_index() const {
    for (int i = 0; i < bus_count(); ++i)
        if (buses[i].type == BusType::slack) return i;
    throw ValidationError("case has no slack bus");
}

int NetworkCase::contingencable_count() const {
    return static_cast<int>(std::count_if(branches.begin(), branches.end(),
                                          [](const Branch& br) { return br.in_service && br.contingencable; }));
}

NetworkCase make_case(NetworkCase raw) {
    if (!(raw.base_mva > 0.0)) throw ValidationError("baseMVA must be positive");
    if (raw.buses.empty()) throw ValidationError("case has no buses");

    std::unordered_set<int> ids;
    int slack = 0;
    for (const auto& bus : raw.buses) {
        if (!ids.insert(bus.id).second) throw ValidationError("duplicate bus id " + std::to_string(bus.id));
        if (bus.type == BusType::slack) ++slack;
    }
    if (slack != 1)
        throw ValidationError("case must have exactly one slack bus, found " + std::to_string(slack));

    for (std::size_t e = 0; e < raw.branches.size(); ++e) {
        const auto& br = raw.branches[e];
        if (!ids.contains(br.from_id) || !ids.contains(br.to_id))
            throw ValidationError("branch " + std::to_string(e + 1) + " references a missing bus");
        if (br.from_id == br.to_id) throw ValidationError("branch " + std::to_string(e + 1) + " is a self-loop");
        if (br.x == 0.0) throw ValidationError("branch " + std::to_string(e + 1) + " has zero reactance");
    }
    for (std::size_t g = 0; g < raw.generators.size(); ++g)
        if (!ids.contains(raw.generators[g].bus_id))
            throw ValidationError("generator " + std::to_string(g + 1) + " references a missing bus");

    if (raw.contingencable_count() == 0) throw ValidationError("case has no contingencable branch");
    return raw;
}

// --- MATPOWER parsing ---------------------------------------------------------

namespace {

struct Line {
    std::size_t number;
    std::string text;
};

std::vector<Line> strip_comments(std::string_view text) {
    std::vector<Line> lines;
    std::size_t number = 1;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view raw = text.substr(start, end - start);
        if (auto pct = raw.find('%'); pct != std::string_view::npos) raw = raw.substr(0, pct);
        lines.push_back({number, std::string(raw)});
        ++number;
        start = end + 1;
    }
    return lines;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double parse_number(std::string_view tok, std::size_t line) {
    double v = 0.0;
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ParseError(line, "malformed number '" + std::string(tok) + "'");
    return v;
}

struct Table {
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> row_lines;
};

// Reads matrix rows starting after '[' until the closing ']'.
Table read_matrix(const std::vector<Line>& lines, std::size_t& li, std::size_t col_after_bracket) {
    Table table;
    std::vector<double> row;
    std::size_t row_line = lines[li].number;
    std::size_t col = col_after_bracket;
    for (; li < lines.size(); ++li, col = 0) {
        const std::string& s = lines[li].text;
        std::size_t pos = col;
        if (row.empty()) row_line = lines[li].number;
        while (pos < s.size()) {
            const char ch = s[pos];
            if (ch == ' ' || ch == '\t' || ch == '\r' || ch == ',') {
                ++pos;
            } else if (ch == ';') {
                if (!row.empty()) {
                    table.rows.push_back(std::move(row));
                    table.row_lines.push_back(row_line);
                    row.clear();
                }
                ++pos;
                row_line = lines[li].number;
            } else if (ch == ']') {
                if (!row.empty()) {
                    table.rows.push_back(std::move(row));
                    table.row_lines.push_back(row_line);
                }
                return table;
            } else {
                std::size_t end = pos;
                while (end < s.size() && s[end] != ' ' && s[end] != '\t' && s[end] != ';' && s[end] != ']' &&
                       s[end] != ',' && s[end] != '\r')
                    ++end;
                if (row.empty()) row_line = lines[li].number;
                row.push_back(parse_number(std::string_view(s).substr(pos, end - pos), lines[li].number));
                pos = end;
            }
        }
        // newline ends a row too
        if (!row.empty()) {
            table.rows.push_back(std::move(row));
            table.row_lines.push_back(row_line);
            row.clear();
        }
    }
    throw ParseError(lines.empty() ? 0 : lines.back().number, "unterminated matrix");
}

int as_int(double v, std::size_t line) {
    if (v != static_cast<double>(static_cast<long long>(v))) throw ParseError(line, "expected an integer value");
    return static_cast<int>(v);
}

void require_columns(const Table& t, std::size_t cols, const char* what) {
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        if (t.rows[r].size() < cols)
            throw ParseError(t.row_lines[r], std::string(what) + " row has " + std::to_string(t.rows[r].size()) +
                                                 " columns, expected at least " + std::to_string(cols));
}

}  // namespace

NetworkCase parse_case(std::string_view text, std::string name) {
    const auto lines = strip_comments(text);
    NetworkCase net;
    net.name = std::move(name);
    bool have_base = false;
    std::optional<Table> bus, gen, branch, noncont;
    std::size_t last_line = 1;

    for (std::size_t li = 0; li < lines.size(); ++li) {
        const std::string s = trim(lines[li].text);
        last_line = lines[li].number;
        if (s.empty()) continue;
        if (s.rfind("function", 0) == 0) {
            if (net.name.empty()) {
                const auto eq = s.find('=');
                if (eq != std::string::npos) net.name = trim(std::string_view(s).substr(eq + 1));
            }
            continue;
        }
        if (s.rfind("mpc.", 0) != 0) throw ParseError(lines[li].number, "unexpected statement '" + s + "'");
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ParseError(lines[li].number, "expected assignment");
        const std::string field = trim(std::string_view(s).substr(4, eq - 4));
        std::string rhs = trim(std::string_view(s).substr(eq + 1));

        if (!rhs.empty() && rhs.front() == '[') {
            // Locate '[' in the raw line so column offsets are right.
            const std::size_t bracket = lines[li].text.find('[');
            Table t = read_matrix(lines, li, bracket + 1);
            if (field == "bus") bus = std::move(t);
            else if (field == "gen") gen = std::move(t);
            else if (field == "branch") branch = std::move(t);
            else if (field == "noncontingencable") noncont = std::move(t);
            // other tables (gencost, areas, bus_name...) are ignored
            continue;
        }
        if (field == "baseMVA") {
            if (!rhs.empty() && rhs.back() == ';') rhs.pop_back();
            net.base_mva = parse_number(trim(rhs), lines[li].number);
            have_base = true;
        }
        // other scalar fields (version) are ignored
    }

    if (!have_base) throw ParseError(last_line, "missing mpc.baseMVA");
    if (!bus) throw ParseError(last_line, "missing mpc.bus table");
    if (!gen) throw ParseError(last_line, "missing mpc.gen table");
    if (!branch) throw ParseError(last_line, "missing mpc.branch table");
    require_columns(*bus, 13, "bus");
    require_columns(*gen, 10, "gen");
    require_columns(*branch, 11, "branch");

    for (std::size_t r = 0; r < bus->rows.size(); ++r) {
        const auto& v = bus->rows[r];
        const std::size_t ln = bus->row_lines[r];
        Bus b;
        b.id = as_int(v[0], ln);
        const int type = as_int(v[1], ln);
        if (type < 1 || type > 3) throw ParseError(ln, "unsupported bus type " + std::to_string(type));
        b.type = static_cast<BusType>(type);
        b.p_load_mw = v[2];
        b.q_load_mvar = v[3];
        b.gs_mw = v[4];
        b.bs_mvar = v[5];
        b.area = as_int(v[6], ln);
        b.vm = v[7];
        b.va_deg = v[8];
        b.base_kv = v[9];
        b.zone = as_int(v[10], ln);
        b.v_max = v[11];
        b.v_min = v[12];
        net.buses.push_back(b);
    }
    for (std::size_t r = 0; r < gen->rows.size(); ++r) {
        const auto& v = gen->rows[r];
        const std::size_t ln = gen->row_lines[r];
        Generator g;
        g.bus_id = as_int(v[0], ln);
        g.p_mw = v[1];
        g.q_mvar = v[2];
        g.q_max = v[3];
        g.q_min = v[4];
        g.v_set = v[5];
        g.m_base = v[6];
        g.in_service = v[7] > 0.0;
        g.p_max = v[8];
        g.p_min = v[9];
        net.generators.push_back(g);
    }
    for (std::size_t r = 0; r < branch->rows.size(); ++r) {
        const auto& v = branch->rows[r];
        const std::size_t ln = branch->row_lines[r];
        Branch br;
        br.from_id = as_int(v[0], ln);
        br.to_id = as_int(v[1], ln);
        br.r = v[2];
        br.x = v[3];
        br.b = v[4];
        br.rate_a = v[5];
        br.rate_b = v[6];
        br.rate_c = v[7];
        br.ratio = v[8];
        br.shift_deg = v[9];
        br.in_service = v[10] > 0.0;
        if (v.size() >= 13) {
            br.ang_min = v[11];
            br.ang_max = v[12];
        }
        net.branches.push_back(br);
    }
    if (noncont) {
        for (std::size_t r = 0; r < noncont->rows.size(); ++r)
            for (double v : noncont->rows[r]) {
                const int row = as_int(v, noncont->row_lines[r]);
                if (row < 1 || row > net.branch_count())
                    throw ParseError(noncont->row_lines[r], "noncontingencable row out of range");
                net.branches[row - 1].contingencable = false;
            }
    }
    return make_case(std::move(net));
}

NetworkCase load_case(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open case file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string name = path;
    if (auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
    if (auto dot = name.rfind('.'); dot != std::string::npos) name = name.substr(0, dot);
    auto net = parse_case(ss.str());
    if (net.name.empty()) net.name = name;
    return net;
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string serialize_case(const NetworkCase& net) {
    std::ostringstream out;
    out << "function mpc = " << (net.name.empty() ? "case" : net.name) << "\n";
    out << "mpc.version = '2';\n";
    out << "mpc.baseMVA = " << num(net.base_mva) << ";\n";
    out << "mpc.bus = [\n";
    for (const auto& b : net.buses) {
        out << '\t' << b.id << '\t' << static_cast<int>(b.type) << '\t' << num(b.p_load_mw) << '\t'
            << num(b.q_load_mvar) << '\t' << num(b.gs_mw) << '\t' << num(b.bs_mvar) << '\t' << b.area << '\t'
            << num(b.vm) << '\t' << num(b.va_deg) << '\t' << num(b.base_kv) << '\t' << b.zone << '\t'
            << num(b.v_max) << '\t' << num(b.v_min) << ";\n";
    }
    out << "];\n";
    out << "mpc.gen = [\n";
    for (const auto& g : net.generators) {
        out << '\t' << g.bus_id << '\t' << num(g.p_mw) << '\t' << num(g.q_mvar) << '\t' << num(g.q_max) << '\t'
            << num(g.q_min) << '\t' << num(g.v_set) << '\t' << num(g.m_base) << '\t' << (g.in_service ? 1 : 0)
            << '\t' << num(g.p_max) << '\t' << num(g.p_min) << ";\n";
    }
    out << "];\n";
    out << "mpc.branch = [\n";
    for (const auto& br : net.branches) {
        out << '\t' << br.from_id << '\t' << br.to_id << '\t' << num(br.r) << '\t' << num(br.x) << '\t'
            << num(br.b) << '\t' << num(br.rate_a) << '\t' << num(br.rate_b) << '\t' << num(br.rate_c) << '\t'
            << num(br.ratio) << '\t' << num(br.shift_deg) << '\t' << (br.in_service ? 1 : 0) << '\t'
            << num(br.ang_min) << '\t' << num(br.ang_max) << ";\n";
    }
    out << "];\n";
    std::vector<int> fixed;
    for (int e = 0; e < net.branch_count(); ++e)
        if (!net.branches[e].contingencable) fixed.push_back(e + 1);
    if (!fixed.empty()) {
        out << "mpc.noncontingencable = [";
        for (std::size_t i = 0; i < fixed.size(); ++i) out << (i ? " " : "") << fixed[i];
        out << "];\n";
    }
    return out.str();
}

// --- graph ------------------------------------------------------------------

BusBranchGraph::BusBranchGraph(const NetworkCase& net)
    : adjacency_(net.bus_count()), in_service_(net.branch_count()) {
    endpoints_.reserve(net.branch_count());
    for (int e = 0; e < net.branch_count(); ++e) {
        const int f = net.from_index(e);
        const int t = net.to_index(e);
        endpoints_.emplace_back(f, t);
        in_service_[e] = net.branches[e].in_service ? 1 : 0;
        if (!in_service_[e]) continue;
        adjacency_[f].push_back({e, t});
        adjacency_[t].push_back({e, f});
    }
}

std::vector<std::uint8_t> BusBranchGraph::active_mask(const ContingencyVector& c) const {
    if (c.n() != static_cast<int>(endpoints_.size()))
        throw ValidationError("contingency length does not match branch count");
    std::vector<std::uint8_t> mask = in_service_;
    for (int e : c.outaged()) mask[e] = 0;
    return mask;
}

int BusBranchGraph::active_edge_count(const ContingencyVector& c) const {
    const auto mask = active_mask(c);
    return static_cast<int>(std::count(mask.begin(), mask.end(), 1));
}

bool BusBranchGraph::is_connected(const ContingencyVector& c) const {
    const int n_branch = static_cast<int>(endpoints_.size());
    if (c.n() != n_branch) throw ValidationError("contingency length does not match branch count");
    UnionFind uf(bus_count());
    if (uf.components() == 1) return true;
    std::size_t next_out = 0;
    const auto& out = c.outaged();
    for (int e = 0; e < n_branch; ++e) {
        if (next_out < out.size() && out[next_out] == e) {
            ++next_out;
            continue;
        }
        if (!in_service_[e]) continue;
        uf.unite(endpoints_[e].first, endpoints_[e].second);
        if (uf.components() == 1) return true;
    }
    return false;
}

bool is_connected(const NetworkCase& net, const ContingencyVector& c) {
    return BusBranchGraph(net).is_connected(c);
}

}  // namespace nkscreen
