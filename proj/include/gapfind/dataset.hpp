#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gapfind {

enum class BlockKind { Real, Binary, Categorical };
enum class Channel { Objective, Subjective };

std::string to_string(BlockKind kind);
std::string to_string(Channel channel);
BlockKind block_kind_from_string(const std::string& s);
Channel channel_from_string(const std::string& s);

struct Block {
    std::string name;
    BlockKind kind = BlockKind::Real;
    int cardinality = 1;  // >= 2 for categorical, 1 otherwise
    Channel channel = Channel::Objective;

    int onehot_width() const { return kind == BlockKind::Categorical ? cardinality : 1; }
};

// Ordered typed design blocks. Order is fixed and serialized with the dataset.
struct VariableSchema {
    std::vector<Block> blocks;

    void validate() const;
    int block_count() const { return static_cast<int>(blocks.size()); }
    int onehot_dim() const;
    // Distinct kind x channel combinations present (at most 6).
    int category_count() const;
    std::string canonical_string() const;
    uint64_t hash() const;
};

struct DesignVector {
    int design_id = 0;
    // One entry per block: real value, 0/1, or categorical index.
    std::vector<double> values;
};

struct ConsumerColumn {
    std::string name;
    BlockKind kind = BlockKind::Real;
    int cardinality = 1;

    int onehot_width() const { return kind == BlockKind::Categorical ? cardinality : 1; }
};

struct ConsumerVector {
    int consumer_id = 0;
    // Real vector of length M_c; categorical source columns are one-hot
    // expanded at load time.
    std::vector<double> values;
};

struct ChoiceEvent {
    int consumer_id = 0;
    int chosen_design_id = 0;
};

struct Dataset {
    VariableSchema schema;
    std::vector<ConsumerColumn> consumer_columns;  // expanded view (post one-hot)
    std::vector<DesignVector> designs;
    std::vector<ConsumerVector> consumers;
    std::vector<ChoiceEvent> events;

    int consumer_dim() const;
    void validate() const;
    void rebuild_index();

    bool has_design(int design_id) const { return design_index_.count(design_id) > 0; }
    const DesignVector& design_by_id(int design_id) const;
    const ConsumerVector& consumer_by_id(int consumer_id) const;
    int design_pos(int design_id) const;

private:
    std::map<int, int> design_index_;
    std::map<int, int> consumer_index_;
};

class LoadError : public std::runtime_error {
public:
    explicit LoadError(const std::string& what) : std::runtime_error(what) {}
};

// Manifest format (format_version = 1): "key = value" lines, '#' comments.
// Required keys: format_version, design_file, consumer_file, event_file,
// design_count, consumer_count, event_count; one design_block line per block
// ("name kind cardinality channel") and one consumer_column line per raw
// consumer column ("name kind cardinality"). Data files are TSV with a
// header row.
Dataset load_dataset(const std::filesystem::path& manifest_path);
void save_dataset(const Dataset& ds, const std::filesystem::path& out_dir,
                  const std::string& manifest_name = "manifest");

struct SplitSpec {
    uint64_t seed = 0;
    double train_fraction = 0.7;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    std::vector<int> val_gap_ids;
    std::vector<int> test_gap_ids;

    void validate(const Dataset& ds) const;
    std::vector<int> all_gap_ids() const;
};

// Consumer partition. Gap pools hold the purchasers of held-out designs
// (and those designs); train/val/test share the held-in catalog.
struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
    Dataset gap_val;
    Dataset gap_test;
    SplitSpec spec;
};

Splits split_dataset(const Dataset& ds, const SplitSpec& spec);

// Standardizes real design blocks and real consumer columns with training
// statistics (population std, zero variance clamped to 1).
struct Normalizer {
    struct Stat {
        double mean = 0.0;
        double std = 1.0;
        bool clamped = false;
    };
    std::vector<std::optional<Stat>> design_stats;    // per block, real only
    std::vector<std::optional<Stat>> consumer_stats;  // per expanded column, real only
    std::vector<std::string> warnings;

    DesignVector apply_design(const DesignVector& d) const;
    DesignVector invert_design(const DesignVector& d) const;
};

Normalizer fit_normalizer(const Dataset& train);
Dataset apply_normalizer(const Normalizer& nrm, const Dataset& ds);
void apply_normalizer(const Normalizer& nrm, Splits& splits);

}  // namespace gapfind
