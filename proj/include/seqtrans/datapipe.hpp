#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqtrans/model.hpp"

namespace seqtrans::data {

struct InteractionEvent {
    std::string user, item, category;
    std::int64_t timestamp = 0;

    bool operator==(const InteractionEvent&) const = default;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// one event per line: user TAB item TAB category TAB timestamp
std::vector<InteractionEvent> parse_canonical(std::istream& in);

struct MovieLensResult {
    std::vector<InteractionEvent> events;
    std::size_t dropped_unknown_movies = 0;
};

// MovieLens native '::' files; every rating becomes implicit feedback.
// genre_rule: "first" (default) or "random_seeded" for multi-genre movies.
MovieLensResult parse_movielens(std::istream& ratings, std::istream& movies,
                                const std::string& genre_rule = "first",
                                std::uint64_t genre_seed = 0);

enum class FilterMode { fixpoint, single_pass };

// drop items with < item_min distinct users and users with < user_min distinct
// items (to a fixpoint by default), then users with < user_min_records events
std::vector<InteractionEvent> ncore_filter(std::vector<InteractionEvent> events,
                                           std::size_t item_min, std::size_t user_min,
                                           std::size_t user_min_records,
                                           FilterMode mode = FilterMode::fixpoint);

// Dense id maps. Users are 0-based; items and categories are 1-based with
// index 0 reserved for padding.
struct CatalogMaps {
    std::vector<std::string> users;  // dense -> external
    std::vector<std::string> items;  // [0] unused
    std::vector<std::string> cats;   // [0] unused
    std::unordered_map<std::string, int> user_ids, item_ids, cat_ids;

    std::size_t n_users() const { return users.size(); }
    std::size_t n_items() const { return items.empty() ? 0 : items.size() - 1; }
    std::size_t n_cats() const { return cats.empty() ? 0 : cats.size() - 1; }
    std::uint64_t digest() const;
};

struct UserSplit {
    std::vector<int> train_items, train_cats;
    int valid_item = 0, valid_cat = 0;
    int test_item = 0, test_cat = 0;
    std::vector<int> all_items;  // train+valid+test distinct item ids, ascending
};

struct SplitDataset {
    CatalogMaps maps;
    std::vector<UserSplit> users;  // indexed by dense user id
    std::size_t interactions() const;
    model::CatalogSizes sizes() const {
        return {maps.n_items(), maps.n_cats(), maps.n_users()};
    }
};

struct SplitReport {
    std::size_t dropped_short_users = 0;  // users with fewer than 3 events
};

// per user: most recent event -> test, second most recent -> validation,
// the rest -> train; ties broken by input order (stable sort)
SplitDataset leave_one_out_split(const std::vector<InteractionEvent>& events,
                                 SplitReport* report = nullptr);

struct DatasetStats {
    std::size_t users = 0, items = 0, interactions = 0, categories = 0;
    double sparsity = 1.0;
};

DatasetStats dataset_stats(const SplitDataset& ds);

struct TrainingWindow {
    int user = 0;
    std::vector<int> input_items, input_cats;
    std::vector<int> target_items, target_cats;
    std::vector<double> mask;  // 1 = real step, 0 = left padding
};

// max(1, T-L) windows with next-step targets; sequences shorter than L+1
// yield a single left-padded window. T < 2 yields none.
std::vector<TrainingWindow> sliding_windows(std::span<const int> items, std::span<const int> cats,
                                            int user, std::size_t window_len);

std::vector<TrainingWindow> all_windows(const SplitDataset& ds, std::size_t window_len);

// seeded shuffle, last partial batch kept
std::vector<model::Batch> make_batches(const std::vector<TrainingWindow>& windows,
                                       std::size_t batch_size, std::uint64_t seed);

// split cache, magic header SEQTRANS-SPLIT v1
void save_split(const SplitDataset& ds, const std::string& path);
SplitDataset load_split(const std::string& path);

void write_canonical_tsv(const std::vector<InteractionEvent>& events, const std::string& path);

}  // namespace seqtrans::data
