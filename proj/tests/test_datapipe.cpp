#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include "seqtrans/datapipe.hpp"
#include "seqtrans/rng.hpp"

using namespace seqtrans;
using data::InteractionEvent;

namespace {

std::vector<InteractionEvent> parse(const std::string& text) {
    std::istringstream in(text);
    return data::parse_canonical(in);
}

std::vector<InteractionEvent> random_events(std::uint64_t seed, std::size_t users,
                                            std::size_t events_per_user) {
    Rng rng(seed);
    std::vector<InteractionEvent> out;
    for (std::size_t u = 0; u < users; ++u)
        for (std::size_t t = 0; t < events_per_user; ++t) {
            const int item = static_cast<int>(rng.below(12));
            out.push_back({"u" + std::to_string(u), "i" + std::to_string(item),
                           "c" + std::to_string(item % 3),
                           static_cast<std::int64_t>(rng.below(1000))});
        }
    return out;
}

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& name) {
        path = std::filesystem::temp_directory_path() /
               ("seqtrans_test_" + std::to_string(::getpid()) + "_" + name);
    }
    ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("canonical parser") {
    CHECK(parse("").empty());

    auto one = parse("alice\titem9\tbooks\t170\n");
    REQUIRE(one.size() == 1);
    CHECK(one[0].user == "alice");
    CHECK(one[0].item == "item9");
    CHECK(one[0].category == "books");
    CHECK(one[0].timestamp == 170);

    CHECK_THROWS_WITH_AS(parse("a\tb\t3\n"), doctest::Contains("line 1"), data::ParseError);
    CHECK_THROWS_AS(parse("a\tb\tc\t-1\n"), data::ParseError);
    CHECK_THROWS_AS(parse("a\t\tc\t5\n"), data::ParseError);

    // duplicates preserved in file order
    auto dup = parse("u\ti\tc\t1\nu\ti\tc\t1\n");
    CHECK(dup.size() == 2);
}

TEST_CASE("movielens parser") {
    const std::string movies =
        "1::Toy Story (1995)::Animation|Children's|Comedy\n"
        "2::Jumanji (1995)::Adventure\n";
    const std::string ratings =
        "7::1::5::978300760\n"
        "7::2::1::978302109\n"
        "8::3::4::978301968\n";
    std::istringstream r(ratings), m(movies);
    auto res = data::parse_movielens(r, m);
    REQUIRE(res.events.size() == 2);
    CHECK(res.dropped_unknown_movies == 1);
    CHECK(res.events[0].category == "Animation");  // first listed genre
    CHECK(res.events[1].category == "Adventure");
    // rating value does not matter: both rows became identical-shape events
    CHECK(res.events[0].user == "7");
    CHECK(res.events[1].user == "7");

    std::istringstream bad_r("7::1::5\n"), m2(movies);
    CHECK_THROWS_AS((void)data::parse_movielens(bad_r, m2), data::ParseError);
}

TEST_CASE("n-core filter") {
    auto events = random_events(5, 6, 10);
    CHECK(data::ncore_filter(events, 0, 0, 0).size() == events.size());

    std::vector<InteractionEvent> lone = {{"u", "i", "c", 1}};
    CHECK(data::ncore_filter(lone, 5, 5, 0).empty());

    // fixpoint: filtering twice changes nothing
    auto once = data::ncore_filter(events, 2, 3, 0);
    auto twice = data::ncore_filter(once, 2, 3, 0);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(once[i].user == twice[i].user);
        CHECK(once[i].item == twice[i].item);
    }

    // the min-records rule keeps users with >= threshold events
    std::vector<InteractionEvent> rec;
    for (int t = 0; t < 5; ++t) rec.push_back({"keep", "i" + std::to_string(t), "c", t});
    for (int t = 0; t < 4; ++t) rec.push_back({"drop", "i" + std::to_string(t), "c", t});
    auto kept = data::ncore_filter(rec, 0, 0, 5);
    for (const auto& e : kept) CHECK(e.user == "keep");
    CHECK(kept.size() == 5);
}

TEST_CASE("leave-one-out split") {
    std::vector<InteractionEvent> events = {
        {"u", "a", "c1", 10}, {"u", "b", "c1", 20}, {"u", "c", "c2", 30}, {"u", "d", "c2", 40}};
    auto ds = data::leave_one_out_split(events);
    REQUIRE(ds.users.size() == 1);
    const auto& us = ds.users[0];
    REQUIRE(us.train_items.size() == 2);
    CHECK(ds.maps.items[us.train_items[0]] == "a");
    CHECK(ds.maps.items[us.train_items[1]] == "b");
    CHECK(ds.maps.items[us.valid_item] == "c");
    CHECK(ds.maps.items[us.test_item] == "d");

    // three events leave a train sequence of length one
    auto ds3 = data::leave_one_out_split(
        {{"u", "a", "c", 1}, {"u", "b", "c", 2}, {"u", "c", "c", 3}});
    CHECK(ds3.users[0].train_items.size() == 1);

    // users with fewer than three events are dropped and reported
    data::SplitReport report;
    auto ds2 = data::leave_one_out_split({{"u", "a", "c", 1}, {"u", "b", "c", 2}}, &report);
    CHECK(ds2.users.empty());
    CHECK(report.dropped_short_users == 1);
}

TEST_CASE("split reconstruction property on random instances") {
    auto events = random_events(99, 8, 12);
    auto ds = data::leave_one_out_split(events);

    // per user, train + valid + test must equal the time-ordered full sequence
    std::map<std::string, std::vector<std::pair<std::int64_t, std::string>>> per_user;
    for (std::size_t i = 0; i < events.size(); ++i)
        per_user[events[i].user].emplace_back(events[i].timestamp, events[i].item);
    for (auto& [user, seq] : per_user)
        std::stable_sort(seq.begin(), seq.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });

    REQUIRE(ds.users.size() == per_user.size());
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        const auto& expect = per_user.at(ds.maps.users[u]);
        const auto& us = ds.users[u];
        REQUIRE(us.train_items.size() + 2 == expect.size());
        for (std::size_t k = 0; k < us.train_items.size(); ++k)
            CHECK(ds.maps.items[us.train_items[k]] == expect[k].second);
        CHECK(ds.maps.items[us.valid_item] == expect[expect.size() - 2].second);
        CHECK(ds.maps.items[us.test_item] == expect.back().second);
    }

    // dense id maps are bijections
    for (std::size_t i = 1; i <= ds.maps.n_items(); ++i)
        CHECK(ds.maps.item_ids.at(ds.maps.items[i]) == static_cast<int>(i));
    for (std::size_t c = 1; c <= ds.maps.n_cats(); ++c)
        CHECK(ds.maps.cat_ids.at(ds.maps.cats[c]) == static_cast<int>(c));
    for (std::size_t u = 0; u < ds.maps.n_users(); ++u)
        CHECK(ds.maps.user_ids.at(ds.maps.users[u]) == static_cast<int>(u));
}

TEST_CASE("sliding windows") {
    std::vector<int> items = {1, 2, 3, 4, 5, 6, 7};
    std::vector<int> cats = {1, 1, 2, 2, 1, 1, 2};
    auto ws = data::sliding_windows(items, cats, 3, 5);
    REQUIRE(ws.size() == 2);
    CHECK(ws[0].input_items == std::vector<int>{1, 2, 3, 4, 5});
    CHECK(ws[0].target_items == std::vector<int>{2, 3, 4, 5, 6});
    CHECK(ws[1].input_items == std::vector<int>{2, 3, 4, 5, 6});
    CHECK(ws[1].target_items == std::vector<int>{3, 4, 5, 6, 7});
    for (const auto& w : ws)
        for (double m : w.mask) CHECK(m == 1.0);

    // short sequence: one left-padded window with a two-step mask
    auto padded = data::sliding_windows(std::vector<int>{1, 2, 3}, std::vector<int>{1, 1, 2}, 0, 5);
    REQUIRE(padded.size() == 1);
    CHECK(padded[0].input_items == std::vector<int>{0, 0, 0, 1, 2});
    CHECK(padded[0].target_items == std::vector<int>{0, 0, 0, 2, 3});
    CHECK(padded[0].mask == std::vector<double>{0, 0, 0, 1, 1});

    CHECK(data::sliding_windows(std::vector<int>{1}, std::vector<int>{1}, 0, 5).empty());

    // window count is max(1, T - L) and targets sit one step right of inputs
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t total = 2 + rng.below(20);
        const std::size_t window = 1 + rng.below(8);
        std::vector<int> seq(total), cs(total);
        for (std::size_t i = 0; i < total; ++i) seq[i] = static_cast<int>(i + 1), cs[i] = 1;
        auto wins = data::sliding_windows(seq, cs, 0, window);
        CHECK(wins.size() == (total > window ? total - window : 1));
        for (const auto& w : wins)
            for (std::size_t t = 0; t < window; ++t)
                if (w.mask[t] == 1.0 && t + 1 < window && w.mask[t + 1] == 1.0)
                    CHECK(w.target_items[t] == w.input_items[t + 1]);
    }
}

TEST_CASE("batching") {
    auto events = random_events(3, 4, 8);
    auto ds = data::leave_one_out_split(events);
    auto windows = data::all_windows(ds, 3);
    REQUIRE(windows.size() >= 10);

    std::vector<data::TrainingWindow> ten(windows.begin(), windows.begin() + 10);
    auto batches = data::make_batches(ten, 4, 123);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);

    auto again = data::make_batches(ten, 4, 123);
    CHECK(batches[0].items == again[0].items);
    CHECK(batches[2].users == again[2].users);

    // shuffling preserves the window multiset
    auto key = [](const data::TrainingWindow& w) {
        std::ostringstream os;
        os << w.user << "|";
        for (int v : w.input_items) os << v << ",";
        for (int v : w.target_items) os << v << ",";
        return os.str();
    };
    std::multiset<std::string> before, after;
    for (const auto& w : ten) before.insert(key(w));
    for (const auto& b : batches)
        for (std::size_t r = 0; r < b.size(); ++r) {
            data::TrainingWindow w;
            w.user = b.users[r];
            w.input_items.assign(b.items.begin() + r * b.L, b.items.begin() + (r + 1) * b.L);
            w.target_items.assign(b.target_items.begin() + r * b.L,
                                  b.target_items.begin() + (r + 1) * b.L);
            after.insert(key(w));
        }
    CHECK(before == after);
}

TEST_CASE("dataset stats") {
    data::SplitDataset empty;
    auto s = data::dataset_stats(empty);
    CHECK(s.users == 0);
    CHECK(s.interactions == 0);
    CHECK(s.sparsity == 1.0);

    auto ds = data::leave_one_out_split(random_events(31, 5, 9));
    auto st = data::dataset_stats(ds);
    CHECK(st.users == ds.maps.n_users());
    CHECK(st.interactions == 5 * 9);
    const double expect =
        1.0 - static_cast<double>(st.interactions) /
                  (static_cast<double>(st.users) * static_cast<double>(st.items));
    CHECK(st.sparsity == expect);
}

TEST_CASE("split cache round-trip") {
    auto ds = data::leave_one_out_split(random_events(77, 6, 10));
    TempFile tmp("split.cache");
    data::save_split(ds, tmp.path.string());
    auto loaded = data::load_split(tmp.path.string());

    CHECK(loaded.maps.users == ds.maps.users);
    CHECK(loaded.maps.items == ds.maps.items);
    CHECK(loaded.maps.cats == ds.maps.cats);
    CHECK(loaded.maps.digest() == ds.maps.digest());
    REQUIRE(loaded.users.size() == ds.users.size());
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        CHECK(loaded.users[u].train_items == ds.users[u].train_items);
        CHECK(loaded.users[u].train_cats == ds.users[u].train_cats);
        CHECK(loaded.users[u].valid_item == ds.users[u].valid_item);
        CHECK(loaded.users[u].test_item == ds.users[u].test_item);
        CHECK(loaded.users[u].all_items == ds.users[u].all_items);
    }

    // version mismatch is an explicit error
    {
        std::ofstream out(tmp.path);
        out << "SEQTRANS-SPLIT v9\n";
    }
    CHECK_THROWS_WITH_AS((void)data::load_split(tmp.path.string()),
                         doctest::Contains("unsupported header"), std::runtime_error);

    CHECK_THROWS_AS((void)data::load_split("/nonexistent/definitely_missing.cache"),
                    std::runtime_error);
}
