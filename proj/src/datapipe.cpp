#include "seqtrans/datapipe.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "seqtrans/rng.hpp"

namespace seqtrans::data {

namespace {

std::vector<std::string> split_on(const std::string& line, const std::string& delim) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t next = line.find(delim, pos);
        if (next == std::string::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + delim.size();
    }
}

std::int64_t parse_timestamp(const std::string& s, std::size_t line_no) {
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || value < 0)
        throw ParseError("line " + std::to_string(line_no) + ": bad timestamp '" + s + "'");
    return value;
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

}  // namespace

std::vector<InteractionEvent> parse_canonical(std::istream& in) {
    std::vector<InteractionEvent> events;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto fields = split_on(line, "\t");
        if (fields.size() != 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected 4 tab-separated " +
                             "fields, got " + std::to_string(fields.size()));
        for (std::size_t i = 0; i < 3; ++i)
            if (fields[i].empty())
                throw ParseError("line " + std::to_string(line_no) + ": empty field " +
                                 std::to_string(i + 1));
        events.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2]),
                          parse_timestamp(fields[3], line_no)});
    }
    return events;
}

MovieLensResult parse_movielens(std::istream& ratings, std::istream& movies,
                                const std::string& genre_rule, std::uint64_t genre_seed) {
    if (genre_rule != "first" && genre_rule != "random_seeded")
        throw std::invalid_argument("unknown genre rule '" + genre_rule + "'");

    std::unordered_map<std::string, std::string> movie_genre;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(movies, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        // MovieID::Title::Genres; titles may themselves contain ':'
        const std::size_t first = line.find("::");
        const std::size_t last = line.rfind("::");
        if (first == std::string::npos || last == first)
            throw ParseError("movies line " + std::to_string(line_no) + ": expected " +
                             "MovieID::Title::Genres");
        const std::string id = line.substr(0, first);
        const std::string genres = line.substr(last + 2);
        if (id.empty() || genres.empty())
            throw ParseError("movies line " + std::to_string(line_no) + ": empty field");
        auto list = split_on(genres, "|");
        std::string category;
        if (genre_rule == "first") {
            category = list.front();
        } else {
            Rng rng(mix_seed(genre_seed, std::hash<std::string>{}(id)));
            category = list[rng.below(list.size())];
        }
        movie_genre[id] = category;
    }

    MovieLensResult result;
    line_no = 0;
    while (std::getline(ratings, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto fields = split_on(line, "::");
        if (fields.size() != 4)
            throw ParseError("ratings line " + std::to_string(line_no) + ": expected " +
                             "UserID::MovieID::Rating::Timestamp");
        auto it = movie_genre.find(fields[1]);
        if (it == movie_genre.end()) {
            ++result.dropped_unknown_movies;
            continue;
        }
        // any rating value counts as implicit feedback
        result.events.push_back(
            {std::move(fields[0]), fields[1], it->second, parse_timestamp(fields[3], line_no)});
    }
    return result;
}

std::vector<InteractionEvent> ncore_filter(std::vector<InteractionEvent> events,
                                           std::size_t item_min, std::size_t user_min,
                                           std::size_t user_min_records, FilterMode mode) {
    // intern ids once; rounds then work on ints
    std::unordered_map<std::string, int> user_id, item_id;
    std::vector<int> ev_user(events.size()), ev_item(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        auto [uit, unew] = user_id.try_emplace(events[i].user, static_cast<int>(user_id.size()));
        auto [iit, inew] = item_id.try_emplace(events[i].item, static_cast<int>(item_id.size()));
        ev_user[i] = uit->second;
        ev_item[i] = iit->second;
    }
    std::vector<char> keep(events.size(), 1);
    std::vector<char> user_ok(user_id.size(), 1), item_ok(item_id.size(), 1);

    for (;;) {
        // distinct-partner counts over surviving events
        std::vector<std::pair<int, int>> ui;
        ui.reserve(events.size());
        for (std::size_t i = 0; i < events.size(); ++i)
            if (keep[i]) ui.emplace_back(ev_user[i], ev_item[i]);
        std::sort(ui.begin(), ui.end());
        ui.erase(std::unique(ui.begin(), ui.end()), ui.end());

        std::vector<std::size_t> user_deg(user_ok.size(), 0), item_deg(item_ok.size(), 0);
        for (const auto& [u, it] : ui) {
            ++user_deg[u];
            ++item_deg[it];
        }
        bool changed = false;
        for (std::size_t u = 0; u < user_ok.size(); ++u)
            if (user_ok[u] && user_deg[u] < user_min) {
                user_ok[u] = 0;
                changed = true;
            }
        for (std::size_t it = 0; it < item_ok.size(); ++it)
            if (item_ok[it] && item_deg[it] < item_min) {
                item_ok[it] = 0;
                changed = true;
            }
        if (changed)
            for (std::size_t i = 0; i < events.size(); ++i)
                if (keep[i] && (!user_ok[ev_user[i]] || !item_ok[ev_item[i]])) keep[i] = 0;
        if (!changed || mode == FilterMode::single_pass) break;
    }

    if (user_min_records > 0) {
        std::vector<std::size_t> records(user_ok.size(), 0);
        for (std::size_t i = 0; i < events.size(); ++i)
            if (keep[i]) ++records[ev_user[i]];
        for (std::size_t i = 0; i < events.size(); ++i)
            if (keep[i] && records[ev_user[i]] < user_min_records) keep[i] = 0;
    }

    std::vector<InteractionEvent> out;
    out.reserve(events.size());
    for (std::size_t i = 0; i < events.size(); ++i)
        if (keep[i]) out.push_back(std::move(events[i]));
    return out;
}

std::uint64_t CatalogMaps::digest() const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto feed = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0x1f;
        h *= 1099511628211ULL;
    };
    feed("users=" + std::to_string(n_users()));
    feed("items=" + std::to_string(n_items()));
    feed("cats=" + std::to_string(n_cats()));
    for (const auto& s : users) feed(s);
    for (const auto& s : items) feed(s);
    for (const auto& s : cats) feed(s);
    return h;
}

std::size_t SplitDataset::interactions() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.train_items.size() + 2;
    return n;
}

SplitDataset leave_one_out_split(const std::vector<InteractionEvent>& events,
                                 SplitReport* report) {
    // group per user, preserving first-appearance order
    std::unordered_map<std::string, std::size_t> user_index;
    std::vector<std::string> user_order;
    std::vector<std::vector<std::size_t>> per_user;
    for (std::size_t i = 0; i < events.size(); ++i) {
        auto [it, inserted] = user_index.try_emplace(events[i].user, user_order.size());
        if (inserted) {
            user_order.push_back(events[i].user);
            per_user.emplace_back();
        }
        per_user[it->second].push_back(i);
    }

    SplitDataset ds;
    if (report) report->dropped_short_users = 0;
    auto item_dense = [&ds](const std::string& ext) {
        auto [it, inserted] = ds.maps.item_ids.try_emplace(ext, 0);
        if (inserted) {
            if (ds.maps.items.empty()) ds.maps.items.emplace_back();  // padding slot
            it->second = static_cast<int>(ds.maps.items.size());
            ds.maps.items.push_back(ext);
        }
        return it->second;
    };
    auto cat_dense = [&ds](const std::string& ext) {
        auto [it, inserted] = ds.maps.cat_ids.try_emplace(ext, 0);
        if (inserted) {
            if (ds.maps.cats.empty()) ds.maps.cats.emplace_back();
            it->second = static_cast<int>(ds.maps.cats.size());
            ds.maps.cats.push_back(ext);
        }
        return it->second;
    };

    for (std::size_t u = 0; u < user_order.size(); ++u) {
        auto& idx = per_user[u];
        if (idx.size() < 3) {
            if (report) ++report->dropped_short_users;
            continue;
        }
        std::stable_sort(idx.begin(), idx.end(), [&events](std::size_t a, std::size_t b) {
            return events[a].timestamp < events[b].timestamp;
        });
        const int dense_user = static_cast<int>(ds.maps.users.size());
        ds.maps.users.push_back(user_order[u]);
        ds.maps.user_ids.emplace(user_order[u], dense_user);

        UserSplit us;
        for (std::size_t k = 0; k + 2 < idx.size(); ++k) {
            us.train_items.push_back(item_dense(events[idx[k]].item));
            us.train_cats.push_back(cat_dense(events[idx[k]].category));
        }
        const auto& valid_ev = events[idx[idx.size() - 2]];
        const auto& test_ev = events[idx[idx.size() - 1]];
        us.valid_item = item_dense(valid_ev.item);
        us.valid_cat = cat_dense(valid_ev.category);
        us.test_item = item_dense(test_ev.item);
        us.test_cat = cat_dense(test_ev.category);

        us.all_items = us.train_items;
        us.all_items.push_back(us.valid_item);
        us.all_items.push_back(us.test_item);
        std::sort(us.all_items.begin(), us.all_items.end());
        us.all_items.erase(std::unique(us.all_items.begin(), us.all_items.end()),
                           us.all_items.end());
        ds.users.push_back(std::move(us));
    }
    return ds;
}

DatasetStats dataset_stats(const SplitDataset& ds) {
    DatasetStats s;
    s.users = ds.maps.n_users();
    s.items = ds.maps.n_items();
    s.categories = ds.maps.n_cats();
    s.interactions = ds.users.empty() ? 0 : ds.interactions();
    const double denom = static_cast<double>(s.users) * static_cast<double>(s.items);
    s.sparsity = denom > 0 ? 1.0 - static_cast<double>(s.interactions) / denom : 1.0;
    return s;
}

std::vector<TrainingWindow> sliding_windows(std::span<const int> items, std::span<const int> cats,
                                            int user, std::size_t window_len) {
    if (window_len < 1) throw std::invalid_argument("sliding_windows: window length must be >= 1");
    if (items.size() != cats.size())
        throw std::invalid_argument("sliding_windows: item/category sequences differ in length");
    const std::size_t total = items.size();
    std::vector<TrainingWindow> out;
    if (total < 2) return out;

    const std::size_t count = total > window_len ? total - window_len : 1;
    const std::size_t input_len = std::min(window_len, total - 1);
    const std::size_t pad = window_len - input_len;
    for (std::size_t start = 0; start < count; ++start) {
        TrainingWindow w;
        w.user = user;
        w.input_items.assign(window_len, 0);
        w.input_cats.assign(window_len, 0);
        w.target_items.assign(window_len, 0);
        w.target_cats.assign(window_len, 0);
        w.mask.assign(window_len, 0.0);
        for (std::size_t t = 0; t < input_len; ++t) {
            w.input_items[pad + t] = items[start + t];
            w.input_cats[pad + t] = cats[start + t];
            w.target_items[pad + t] = items[start + t + 1];
            w.target_cats[pad + t] = cats[start + t + 1];
            w.mask[pad + t] = 1.0;
        }
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<TrainingWindow> all_windows(const SplitDataset& ds, std::size_t window_len) {
    std::vector<TrainingWindow> out;
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        auto w = sliding_windows(ds.users[u].train_items, ds.users[u].train_cats,
                                 static_cast<int>(u), window_len);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

std::vector<model::Batch> make_batches(const std::vector<TrainingWindow>& windows,
                                       std::size_t batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch size must be >= 1");
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<model::Batch> out;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, order.size());
        model::Batch b;
        b.L = windows[order[begin]].input_items.size();
        for (std::size_t i = begin; i < end; ++i) {
            const TrainingWindow& w = windows[order[i]];
            b.users.push_back(w.user);
            b.items.insert(b.items.end(), w.input_items.begin(), w.input_items.end());
            b.cats.insert(b.cats.end(), w.input_cats.begin(), w.input_cats.end());
            b.target_items.insert(b.target_items.end(), w.target_items.begin(),
                                  w.target_items.end());
            b.target_cats.insert(b.target_cats.end(), w.target_cats.begin(), w.target_cats.end());
            b.mask.insert(b.mask.end(), w.mask.begin(), w.mask.end());
        }
        out.push_back(std::move(b));
    }
    return out;
}

namespace {

constexpr const char* kSplitMagic = "SEQTRANS-SPLIT v1";

void require(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error("split cache: " + what);
}

}  // namespace

void save_split(const SplitDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << kSplitMagic << "\n";
    out << "counts\t" << ds.maps.n_users() << "\t" << ds.maps.n_items() << "\t"
        << ds.maps.n_cats() << "\n";
    for (std::size_t u = 0; u < ds.maps.n_users(); ++u)
        out << "user\t" << u << "\t" << ds.maps.users[u] << "\n";
    for (std::size_t i = 1; i <= ds.maps.n_items(); ++i)
        out << "item\t" << i << "\t" << ds.maps.items[i] << "\n";
    for (std::size_t c = 1; c <= ds.maps.n_cats(); ++c)
        out << "cat\t" << c << "\t" << ds.maps.cats[c] << "\n";
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        const UserSplit& us = ds.users[u];
        out << "seq\t" << u << "\t" << us.train_items.size() << "\n";
        out << "ti";
        for (int v : us.train_items) out << " " << v;
        out << "\ntc";
        for (int v : us.train_cats) out << " " << v;
        out << "\nvalid\t" << us.valid_item << "\t" << us.valid_cat << "\n";
        out << "test\t" << us.test_item << "\t" << us.test_cat << "\n";
    }
    out << "end\n";
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

SplitDataset load_split(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "empty file");
    if (line != kSplitMagic)
        throw std::runtime_error("split cache '" + path + "': unsupported header '" + line +
                                 "' (expected '" + kSplitMagic + "')");
    require(static_cast<bool>(std::getline(in, line)), "missing counts");
    auto counts = split_on(line, "\t");
    require(counts.size() == 4 && counts[0] == "counts", "bad counts line");
    const std::size_t n_users = std::stoull(counts[1]);
    const std::size_t n_items = std::stoull(counts[2]);
    const std::size_t n_cats = std::stoull(counts[3]);

    SplitDataset ds;
    ds.maps.users.reserve(n_users);
    ds.maps.items.assign(1, "");
    ds.maps.cats.assign(1, "");
    auto read_map_line = [&](const char* kind, std::size_t expect_dense,
                             std::vector<std::string>& store,
                             std::unordered_map<std::string, int>& ids) {
        require(static_cast<bool>(std::getline(in, line)), "truncated map section");
        auto f = split_on(line, "\t");
        require(f.size() == 3 && f[0] == kind, std::string("bad ") + kind + " line");
        require(std::stoull(f[1]) == expect_dense, std::string(kind) + " ids out of order");
        ids.emplace(f[2], static_cast<int>(store.size()));
        store.push_back(f[2]);
    };
    for (std::size_t u = 0; u < n_users; ++u)
        read_map_line("user", u, ds.maps.users, ds.maps.user_ids);
    for (std::size_t i = 1; i <= n_items; ++i)
        read_map_line("item", i, ds.maps.items, ds.maps.item_ids);
    for (std::size_t c = 1; c <= n_cats; ++c) read_map_line("cat", c, ds.maps.cats, ds.maps.cat_ids);

    auto parse_ints = [](const std::string& s, std::size_t skip) {
        std::vector<int> out;
        std::istringstream iss(s.substr(skip));
        int v;
        while (iss >> v) out.push_back(v);
        return out;
    };
    for (std::size_t u = 0; u < n_users; ++u) {
        require(static_cast<bool>(std::getline(in, line)), "truncated user section");
        auto f = split_on(line, "\t");
        require(f.size() == 3 && f[0] == "seq" && std::stoull(f[1]) == u, "bad seq line");
        const std::size_t train_len = std::stoull(f[2]);
        UserSplit us;
        require(static_cast<bool>(std::getline(in, line)) && line.rfind("ti", 0) == 0,
                "missing train items");
        us.train_items = parse_ints(line, 2);
        require(static_cast<bool>(std::getline(in, line)) && line.rfind("tc", 0) == 0,
                "missing train categories");
        us.train_cats = parse_ints(line, 2);
        require(us.train_items.size() == train_len && us.train_cats.size() == train_len,
                "train length mismatch");
        require(static_cast<bool>(std::getline(in, line)), "missing valid line");
        auto fv = split_on(line, "\t");
        require(fv.size() == 3 && fv[0] == "valid", "bad valid line");
        us.valid_item = std::stoi(fv[1]);
        us.valid_cat = std::stoi(fv[2]);
        require(static_cast<bool>(std::getline(in, line)), "missing test line");
        auto ft = split_on(line, "\t");
        require(ft.size() == 3 && ft[0] == "test", "bad test line");
        us.test_item = std::stoi(ft[1]);
        us.test_cat = std::stoi(ft[2]);

        us.all_items = us.train_items;
        us.all_items.push_back(us.valid_item);
        us.all_items.push_back(us.test_item);
        std::sort(us.all_items.begin(), us.all_items.end());
        us.all_items.erase(std::unique(us.all_items.begin(), us.all_items.end()),
                           us.all_items.end());
        ds.users.push_back(std::move(us));
    }
    require(static_cast<bool>(std::getline(in, line)) && line == "end", "missing end marker");
    return ds;
}

void write_canonical_tsv(const std::vector<InteractionEvent>& events, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& e : events)
        out << e.user << "\t" << e.item << "\t" << e.category << "\t" << e.timestamp << "\n";
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace seqtrans::data
