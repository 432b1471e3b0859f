#include "gapfind/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "gapfind/rng.hpp"

namespace gapfind {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::vector<std::string> split_tabs(const std::string& s) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw LoadError("cannot parse number '" + s + "' in " + what);
    }
}

long parse_long(const std::string& s, const std::string& what) {
    try {
        size_t used = 0;
        long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw LoadError("cannot parse integer '" + s + "' in " + what);
    }
}

std::string fmt_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string to_string(BlockKind kind) {
    switch (kind) {
        case BlockKind::Real: return "real";
        case BlockKind::Binary: return "binary";
        case BlockKind::Categorical: return "categorical";
    }
    return "?";
}

std::string to_string(Channel channel) {
    return channel == Channel::Objective ? "objective" : "subjective";
}

BlockKind block_kind_from_string(const std::string& s) {
    if (s == "real") return BlockKind::Real;
    if (s == "binary") return BlockKind::Binary;
    if (s == "categorical") return BlockKind::Categorical;
    throw LoadError("unknown block kind '" + s + "'");
}

Channel channel_from_string(const std::string& s) {
    if (s == "objective") return Channel::Objective;
    if (s == "subjective") return Channel::Subjective;
    throw LoadError("unknown channel '" + s + "'");
}

void VariableSchema::validate() const {
    if (blocks.empty()) throw LoadError("schema has no blocks");
    std::set<std::string> names;
    for (const auto& b : blocks) {
        if (b.name.empty()) throw LoadError("schema block with empty name");
        if (!names.insert(b.name).second) throw LoadError("duplicate block name '" + b.name + "'");
        if (b.kind == BlockKind::Categorical) {
            if (b.cardinality < 2)
                throw LoadError("categorical block '" + b.name + "' needs cardinality >= 2");
        } else if (b.cardinality != 1) {
            throw LoadError("non-categorical block '" + b.name + "' must have cardinality 1");
        }
    }
    if (category_count() > 6) throw LoadError("schema exceeds the 6 variable categories");
}

int VariableSchema::onehot_dim() const {
    int n = 0;
    for (const auto& b : blocks) n += b.onehot_width();
    return n;
}

int VariableSchema::category_count() const {
    std::set<std::pair<int, int>> cats;
    for (const auto& b : blocks) cats.insert({static_cast<int>(b.kind), static_cast<int>(b.channel)});
    return static_cast<int>(cats.size());
}

std::string VariableSchema::canonical_string() const {
    std::string s;
    for (const auto& b : blocks)
        s += b.name + ":" + to_string(b.kind) + ":" + std::to_string(b.cardinality) + ":" +
             to_string(b.channel) + ";";
    return s;
}

uint64_t VariableSchema::hash() const {
    // FNV-1a over the canonical schema string.
    uint64_t h = 1469598103934665603ULL;
    for (char c : canonical_string()) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

int Dataset::consumer_dim() const {
    int n = 0;
    for (const auto& c : consumer_columns) n += c.onehot_width();
    return n;
}

void Dataset::rebuild_index() {
    design_index_.clear();
    consumer_index_.clear();
    for (size_t i = 0; i < designs.size(); ++i) {
        if (!design_index_.emplace(designs[i].design_id, static_cast<int>(i)).second)
            throw LoadError("duplicate design_id " + std::to_string(designs[i].design_id));
    }
    for (size_t i = 0; i < consumers.size(); ++i) {
        if (!consumer_index_.emplace(consumers[i].consumer_id, static_cast<int>(i)).second)
            throw LoadError("duplicate consumer_id " + std::to_string(consumers[i].consumer_id));
    }
}

const DesignVector& Dataset::design_by_id(int design_id) const {
    auto it = design_index_.find(design_id);
    if (it == design_index_.end()) throw LoadError("unknown design " + std::to_string(design_id));
    return designs[static_cast<size_t>(it->second)];
}

const ConsumerVector& Dataset::consumer_by_id(int consumer_id) const {
    auto it = consumer_index_.find(consumer_id);
    if (it == consumer_index_.end()) throw LoadError("unknown consumer " + std::to_string(consumer_id));
    return consumers[static_cast<size_t>(it->second)];
}

int Dataset::design_pos(int design_id) const {
    auto it = design_index_.find(design_id);
    if (it == design_index_.end()) throw LoadError("unknown design " + std::to_string(design_id));
    return it->second;
}

void Dataset::validate() const {
    schema.validate();
    const size_t nblocks = schema.blocks.size();
    for (const auto& d : designs) {
        if (d.values.size() != nblocks)
            throw LoadError("design " + std::to_string(d.design_id) + " has " +
                            std::to_string(d.values.size()) + " blocks, schema has " +
                            std::to_string(nblocks));
        for (size_t b = 0; b < nblocks; ++b) {
            const Block& blk = schema.blocks[b];
            const double v = d.values[b];
            if (!std::isfinite(v))
                throw LoadError("non-finite value in design " + std::to_string(d.design_id) +
                                " block '" + blk.name + "'");
            if (blk.kind == BlockKind::Binary && v != 0.0 && v != 1.0)
                throw LoadError("binary block '" + blk.name + "' of design " +
                                std::to_string(d.design_id) + " is not 0/1");
            if (blk.kind == BlockKind::Categorical) {
                if (v != std::floor(v) || v < 0.0 || v >= blk.cardinality)
                    throw LoadError("index out of range in design " + std::to_string(d.design_id) +
                                    " block '" + blk.name + "': " + std::to_string(v) +
                                    " (cardinality " + std::to_string(blk.cardinality) + ")");
            }
        }
    }
    const int mc = consumer_dim();
    for (const auto& c : consumers) {
        if (static_cast<int>(c.values.size()) != mc)
            throw LoadError("consumer " + std::to_string(c.consumer_id) + " has length " +
                            std::to_string(c.values.size()) + ", manifest M_c is " + std::to_string(mc));
        for (double v : c.values)
            if (!std::isfinite(v))
                throw LoadError("non-finite value in consumer " + std::to_string(c.consumer_id));
    }
    std::set<int> design_ids, consumer_ids;
    for (const auto& d : designs) design_ids.insert(d.design_id);
    for (const auto& c : consumers) consumer_ids.insert(c.consumer_id);
    for (size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (!design_ids.count(e.chosen_design_id))
            throw LoadError("unknown design " + std::to_string(e.chosen_design_id) + " in event row " +
                            std::to_string(i + 1));
        if (!consumer_ids.count(e.consumer_id))
            throw LoadError("unknown consumer " + std::to_string(e.consumer_id) + " in event row " +
                            std::to_string(i + 1));
    }
}

namespace {

struct ManifestData {
    int format_version = -1;
    std::string design_file, consumer_file, event_file;
    long design_count = -1, consumer_count = -1, event_count = -1;
    VariableSchema schema;
    std::vector<ConsumerColumn> raw_consumer_columns;
};

ManifestData parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open manifest " + path.string());
    ManifestData m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw LoadError("manifest line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key == "format_version") {
            m.format_version = static_cast<int>(parse_long(value, "manifest format_version"));
        } else if (key == "design_file") {
            m.design_file = value;
        } else if (key == "consumer_file") {
            m.consumer_file = value;
        } else if (key == "event_file") {
            m.event_file = value;
        } else if (key == "design_count") {
            m.design_count = parse_long(value, "manifest design_count");
        } else if (key == "consumer_count") {
            m.consumer_count = parse_long(value, "manifest consumer_count");
        } else if (key == "event_count") {
            m.event_count = parse_long(value, "manifest event_count");
        } else if (key == "design_block") {
            auto toks = split_ws(value);
            if (toks.size() != 4)
                throw LoadError("manifest line " + std::to_string(lineno) +
                                ": design_block wants 'name kind cardinality channel'");
            Block b;
            b.name = toks[0];
            b.kind = block_kind_from_string(toks[1]);
            b.cardinality = static_cast<int>(parse_long(toks[2], "design_block cardinality"));
            b.channel = channel_from_string(toks[3]);
            m.schema.blocks.push_back(b);
        } else if (key == "consumer_column") {
            auto toks = split_ws(value);
            if (toks.size() != 3)
                throw LoadError("manifest line " + std::to_string(lineno) +
                                ": consumer_column wants 'name kind cardinality'");
            ConsumerColumn c;
            c.name = toks[0];
            c.kind = block_kind_from_string(toks[1]);
            c.cardinality = static_cast<int>(parse_long(toks[2], "consumer_column cardinality"));
            m.raw_consumer_columns.push_back(c);
        } else {
            throw LoadError("unknown manifest key '" + key + "' on line " + std::to_string(lineno));
        }
    }
    if (m.format_version != 1)
        throw LoadError("unsupported manifest format_version " + std::to_string(m.format_version));
    if (m.design_file.empty() || m.consumer_file.empty() || m.event_file.empty())
        throw LoadError("manifest missing design_file/consumer_file/event_file");
    if (m.design_count < 0 || m.consumer_count < 0 || m.event_count < 0)
        throw LoadError("manifest missing design_count/consumer_count/event_count");
    return m;
}

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path, size_t ncols) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open data file " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        auto cells = split_tabs(line);
        if (cells.size() != ncols)
            throw LoadError(path.string() + " row " + std::to_string(rows.size() + 1) + " has " +
                            std::to_string(cells.size()) + " columns, expected " + std::to_string(ncols));
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    ManifestData m = parse_manifest(manifest_path);
    m.schema.validate();
    const auto dir = manifest_path.parent_path();

    Dataset ds;
    ds.schema = m.schema;

    // Expanded consumer columns: categorical raw columns one-hot at load.
    for (const auto& rc : m.raw_consumer_columns) {
        if (rc.kind == BlockKind::Categorical) {
            if (rc.cardinality < 2)
                throw LoadError("categorical consumer column '" + rc.name + "' needs cardinality >= 2");
            for (int k = 0; k < rc.cardinality; ++k)
                ds.consumer_columns.push_back({rc.name + "__" + std::to_string(k), BlockKind::Binary, 1});
        } else {
            ds.consumer_columns.push_back({rc.name, rc.kind, 1});
        }
    }

    const auto design_rows = read_tsv(dir / m.design_file, m.schema.blocks.size() + 1);
    for (const auto& row : design_rows) {
        DesignVector d;
        d.design_id = static_cast<int>(parse_long(row[0], m.design_file));
        for (size_t b = 0; b < m.schema.blocks.size(); ++b)
            d.values.push_back(parse_double(row[b + 1], m.design_file + " design " + row[0]));
        ds.designs.push_back(std::move(d));
    }

    const auto consumer_rows = read_tsv(dir / m.consumer_file, m.raw_consumer_columns.size() + 1);
    for (const auto& row : consumer_rows) {
        ConsumerVector c;
        c.consumer_id = static_cast<int>(parse_long(row[0], m.consumer_file));
        for (size_t j = 0; j < m.raw_consumer_columns.size(); ++j) {
            const auto& rc = m.raw_consumer_columns[j];
            const double v = parse_double(row[j + 1], m.consumer_file + " consumer " + row[0]);
            if (rc.kind == BlockKind::Categorical) {
                if (v != std::floor(v) || v < 0.0 || v >= rc.cardinality)
                    throw LoadError("index out of range in consumer " + row[0] + " column '" + rc.name +
                                    "'");
                for (int k = 0; k < rc.cardinality; ++k)
                    c.values.push_back(k == static_cast<int>(v) ? 1.0 : 0.0);
            } else {
                c.values.push_back(v);
            }
        }
        ds.consumers.push_back(std::move(c));
    }

    const auto event_rows = read_tsv(dir / m.event_file, 2);
    for (const auto& row : event_rows) {
        ChoiceEvent e;
        e.consumer_id = static_cast<int>(parse_long(row[0], m.event_file));
        e.chosen_design_id = static_cast<int>(parse_long(row[1], m.event_file));
        ds.events.push_back(e);
    }

    if (static_cast<long>(ds.designs.size()) != m.design_count)
        throw LoadError("design_count mismatch: manifest says " + std::to_string(m.design_count) +
                        ", file has " + std::to_string(ds.designs.size()));
    if (static_cast<long>(ds.consumers.size()) != m.consumer_count)
        throw LoadError("consumer_count mismatch: manifest says " + std::to_string(m.consumer_count) +
                        ", file has " + std::to_string(ds.consumers.size()));
    if (static_cast<long>(ds.events.size()) != m.event_count)
        throw LoadError("event_count mismatch: manifest says " + std::to_string(m.event_count) +
                        ", file has " + std::to_string(ds.events.size()));

    ds.rebuild_index();
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& out_dir, const std::string& manifest_name) {
    std::filesystem::create_directories(out_dir);

    {
        std::ofstream out(out_dir / "designs.tsv");
        out << "design_id";
        for (const auto& b : ds.schema.blocks) out << '\t' << b.name;
        out << '\n';
        for (const auto& d : ds.designs) {
            out << d.design_id;
            for (double v : d.values) out << '\t' << fmt_value(v);
            out << '\n';
        }
    }
    {
        std::ofstream out(out_dir / "consumers.tsv");
        out << "consumer_id";
        for (const auto& c : ds.consumer_columns) out << '\t' << c.name;
        out << '\n';
        for (const auto& c : ds.consumers) {
            out << c.consumer_id;
            for (double v : c.values) out << '\t' << fmt_value(v);
            out << '\n';
        }
    }
    {
        std::ofstream out(out_dir / "events.tsv");
        out << "consumer_id\tdesign_id\n";
        for (const auto& e : ds.events) out << e.consumer_id << '\t' << e.chosen_design_id << '\n';
    }
    {
        std::ofstream out(out_dir / manifest_name);
        out << "format_version = 1\n";
        out << "design_file = designs.tsv\n";
        out << "consumer_file = consumers.tsv\n";
        out << "event_file = events.tsv\n";
        out << "design_count = " << ds.designs.size() << '\n';
        out << "consumer_count = " << ds.consumers.size() << '\n';
        out << "event_count = " << ds.events.size() << '\n';
        for (const auto& b : ds.schema.blocks)
            out << "design_block = " << b.name << ' ' << to_string(b.kind) << ' ' << b.cardinality << ' '
                << to_string(b.channel) << '\n';
        // Saved datasets are already expanded, so columns serialize as-is.
        for (const auto& c : ds.consumer_columns)
            out << "consumer_column = " << c.name << ' ' << to_string(c.kind) << ' ' << c.cardinality
                << '\n';
    }
}

std::vector<int> SplitSpec::all_gap_ids() const {
    std::vector<int> ids = val_gap_ids;
    ids.insert(ids.end(), test_gap_ids.begin(), test_gap_ids.end());
    return ids;
}

void SplitSpec::validate(const Dataset& ds) const {
    const double total = train_fraction + val_fraction + test_fraction;
    if (std::fabs(total - 1.0) > 1e-9) throw LoadError("split fractions must sum to 1");
    if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0)
        throw LoadError("split fractions must be nonnegative");
    std::set<int> seen;
    for (int id : all_gap_ids()) {
        if (!ds.has_design(id))
            throw LoadError("held-out design " + std::to_string(id) + " not in catalog");
        if (!seen.insert(id).second)
            throw LoadError("held-out design " + std::to_string(id) + " listed twice");
    }
}

Splits split_dataset(const Dataset& ds, const SplitSpec& spec) {
    spec.validate(ds);
    const std::set<int> val_gaps(spec.val_gap_ids.begin(), spec.val_gap_ids.end());
    const std::set<int> test_gaps(spec.test_gap_ids.begin(), spec.test_gap_ids.end());

    // Purchasers of any held-out design leave the main pool entirely. A
    // consumer with purchases in both pools goes to the validation pool.
    std::set<int> val_pool, test_pool;
    for (const auto& e : ds.events) {
        if (val_gaps.count(e.chosen_design_id)) val_pool.insert(e.consumer_id);
        else if (test_gaps.count(e.chosen_design_id)) test_pool.insert(e.consumer_id);
    }
    for (int c : val_pool) test_pool.erase(c);

    std::vector<int> remaining;
    for (const auto& c : ds.consumers)
        if (!val_pool.count(c.consumer_id) && !test_pool.count(c.consumer_id))
            remaining.push_back(c.consumer_id);

    Rng rng(spec.seed);
    rng.shuffle(remaining);
    const size_t n = remaining.size();
    const size_t n_train = static_cast<size_t>(spec.train_fraction * static_cast<double>(n));
    const size_t n_val = static_cast<size_t>(spec.val_fraction * static_cast<double>(n));
    std::set<int> train_ids(remaining.begin(), remaining.begin() + n_train);
    std::set<int> val_ids(remaining.begin() + n_train, remaining.begin() + n_train + n_val);
    std::set<int> test_ids(remaining.begin() + n_train + n_val, remaining.end());

    auto heldin_designs = [&] {
        std::vector<DesignVector> out;
        for (const auto& d : ds.designs)
            if (!val_gaps.count(d.design_id) && !test_gaps.count(d.design_id)) out.push_back(d);
        return out;
    }();

    auto make_split = [&](const std::set<int>& consumer_ids, const std::vector<DesignVector>& designs,
                          bool heldin_events_only) {
        Dataset out;
        out.schema = ds.schema;
        out.consumer_columns = ds.consumer_columns;
        out.designs = designs;
        for (const auto& c : ds.consumers)
            if (consumer_ids.count(c.consumer_id)) out.consumers.push_back(c);
        std::set<int> design_ids;
        for (const auto& d : designs) design_ids.insert(d.design_id);
        for (const auto& e : ds.events) {
            if (!consumer_ids.count(e.consumer_id)) continue;
            if (heldin_events_only && !design_ids.count(e.chosen_design_id)) continue;
            out.events.push_back(e);
        }
        out.rebuild_index();
        return out;
    };

    auto gap_designs = [&](const std::set<int>& gaps) {
        std::vector<DesignVector> out;
        for (const auto& d : ds.designs)
            if (gaps.count(d.design_id)) out.push_back(d);
        return out;
    };

    Splits s;
    s.spec = spec;
    s.train = make_split(train_ids, heldin_designs, true);
    s.val = make_split(val_ids, heldin_designs, true);
    s.test = make_split(test_ids, heldin_designs, true);
    // Gap pools keep all of their consumers' events; the gap catalog lists
    // only the held-out designs themselves.
    s.gap_val = make_split(val_pool, gap_designs(val_gaps), false);
    s.gap_test = make_split(test_pool, gap_designs(test_gaps), false);
    return s;
}

Normalizer fit_normalizer(const Dataset& train) {
    Normalizer nrm;
    nrm.design_stats.resize(train.schema.blocks.size());
    nrm.consumer_stats.resize(static_cast<size_t>(train.consumer_dim()));

    for (size_t b = 0; b < train.schema.blocks.size(); ++b) {
        if (train.schema.blocks[b].kind != BlockKind::Real) continue;
        double mean = 0.0;
        for (const auto& d : train.designs) mean += d.values[b];
        mean /= static_cast<double>(train.designs.size());
        double var = 0.0;
        for (const auto& d : train.designs) var += (d.values[b] - mean) * (d.values[b] - mean);
        var /= static_cast<double>(train.designs.size());
        Normalizer::Stat st;
        st.mean = mean;
        st.std = std::sqrt(var);
        if (st.std < 1e-12) {
            st.std = 1.0;
            st.clamped = true;
            nrm.warnings.push_back("design block '" + train.schema.blocks[b].name +
                                   "' has zero variance; std clamped to 1");
        }
        nrm.design_stats[b] = st;
    }

    for (size_t j = 0; j < nrm.consumer_stats.size(); ++j) {
        if (train.consumer_columns[j].kind != BlockKind::Real) continue;
        double mean = 0.0;
        for (const auto& c : train.consumers) mean += c.values[j];
        mean /= static_cast<double>(train.consumers.size());
        double var = 0.0;
        for (const auto& c : train.consumers) var += (c.values[j] - mean) * (c.values[j] - mean);
        var /= static_cast<double>(train.consumers.size());
        Normalizer::Stat st;
        st.mean = mean;
        st.std = std::sqrt(var);
        if (st.std < 1e-12) {
            st.std = 1.0;
            st.clamped = true;
            nrm.warnings.push_back("consumer column '" + train.consumer_columns[j].name +
                                   "' has zero variance; std clamped to 1");
        }
        nrm.consumer_stats[j] = st;
    }
    return nrm;
}

DesignVector Normalizer::apply_design(const DesignVector& d) const {
    DesignVector out = d;
    for (size_t b = 0; b < design_stats.size() && b < out.values.size(); ++b)
        if (design_stats[b]) out.values[b] = (out.values[b] - design_stats[b]->mean) / design_stats[b]->std;
    return out;
}

DesignVector Normalizer::invert_design(const DesignVector& d) const {
    DesignVector out = d;
    for (size_t b = 0; b < design_stats.size() && b < out.values.size(); ++b)
        if (design_stats[b]) out.values[b] = out.values[b] * design_stats[b]->std + design_stats[b]->mean;
    return out;
}

Dataset apply_normalizer(const Normalizer& nrm, const Dataset& ds) {
    Dataset out = ds;
    for (auto& d : out.designs) d = nrm.apply_design(d);
    for (auto& c : out.consumers)
        for (size_t j = 0; j < nrm.consumer_stats.size() && j < c.values.size(); ++j)
            if (nrm.consumer_stats[j])
                c.values[j] = (c.values[j] - nrm.consumer_stats[j]->mean) / nrm.consumer_stats[j]->std;
    out.rebuild_index();
    return out;
}

void apply_normalizer(const Normalizer& nrm, Splits& splits) {
    splits.train = apply_normalizer(nrm, splits.train);
    splits.val = apply_normalizer(nrm, splits.val);
    splits.test = apply_normalizer(nrm, splits.test);
    splits.gap_val = apply_normalizer(nrm, splits.gap_val);
    splits.gap_test = apply_normalizer(nrm, splits.gap_test);
}

}  // namespace gapfind
