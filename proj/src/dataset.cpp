#include "poisonrec/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace poisonrec {

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::implicit ? "implicit" : "explicit";
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "implicit") return DatasetKind::implicit;
  if (text == "explicit") return DatasetKind::explicit_ratings;
  throw Error("unknown dataset kind '" + text + "'");
}

bool operator==(const Interaction& a, const Interaction& b) {
  return a.item == b.item && a.score == b.score && a.timestamp == b.timestamp;
}

bool operator==(const InteractionMatrix& a, const InteractionMatrix& b) {
  return a.num_items_ == b.num_items_ && a.num_normal_ == b.num_normal_ && a.r_max_ == b.r_max_ &&
         a.kind_ == b.kind_ && a.rows_ == b.rows_;
}

InteractionMatrix InteractionMatrix::from_triplets(std::size_t num_users, std::size_t num_items,
                                                   double r_max, DatasetKind kind,
                                                   std::span<const Triplet> triplets,
                                                   std::optional<std::size_t> num_normal) {
  InteractionMatrix m;
  m.num_items_ = num_items;
  m.num_normal_ = std::min(num_normal.value_or(num_users), num_users);
  m.r_max_ = r_max;
  m.kind_ = kind;
  m.rows_.resize(num_users);
  for (const auto& t : triplets) {
    if (t.user >= num_users || t.item >= num_items) {
      throw Error("triplet (" + std::to_string(t.user) + ", " + std::to_string(t.item) +
                  ") outside " + std::to_string(num_users) + "x" + std::to_string(num_items));
    }
    if (!(t.score > 0.0)) throw Error("non-positive score for user " + std::to_string(t.user));
    m.rows_[t.user].push_back({t.item, kind == DatasetKind::implicit ? 1.0 : t.score, t.timestamp});
  }
  for (auto& row : m.rows_) {
    std::stable_sort(row.begin(), row.end(),
                     [](const Interaction& a, const Interaction& b) { return a.item < b.item; });
    row.erase(std::unique(row.begin(), row.end(),
                          [](const Interaction& a, const Interaction& b) { return a.item == b.item; }),
              row.end());
  }
  m.recount();
  return m;
}

void InteractionMatrix::recount() {
  item_counts_.assign(num_items_, 0);
  nnz_ = 0;
  for (const auto& row : rows_) {
    nnz_ += row.size();
    for (const auto& e : row) ++item_counts_[e.item];
  }
}

bool InteractionMatrix::has(std::size_t user, std::size_t item) const {
  return score(user, item).has_value();
}

std::optional<double> InteractionMatrix::score(std::size_t user, std::size_t item) const {
  const auto& row = rows_.at(user);
  auto it = std::lower_bound(row.begin(), row.end(), item,
                             [](const Interaction& e, std::size_t i) { return e.item < i; });
  if (it != row.end() && it->item == item) return it->score;
  return std::nullopt;
}

std::vector<Triplet> InteractionMatrix::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz_);
  for (std::size_t u = 0; u < rows_.size(); ++u) {
    for (const auto& e : rows_[u]) out.push_back({static_cast<Index>(u), e.item, e.score, e.timestamp});
  }
  return out;
}

void InteractionMatrix::set_ids(std::vector<std::string> user_ids, std::vector<std::string> item_ids) {
  if (!user_ids.empty() && user_ids.size() > rows_.size()) throw Error("user id map larger than matrix");
  if (!item_ids.empty() && item_ids.size() != num_items_) throw Error("item id map size mismatch");
  user_ids_ = std::move(user_ids);
  item_ids_ = std::move(item_ids);
}

InteractionMatrix InteractionMatrix::with_appended_users(
    const std::vector<std::vector<Interaction>>& rows) const {
  InteractionMatrix out = *this;
  for (auto row : rows) {
    std::sort(row.begin(), row.end(), [](const Interaction& a, const Interaction& b) { return a.item < b.item; });
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (row[k].item >= num_items_) throw Error("appended row references unknown item");
      if (k > 0 && row[k].item == row[k - 1].item) throw Error("appended row has a duplicate item");
    }
    out.rows_.push_back(std::move(row));
  }
  out.recount();
  return out;
}

InteractionMatrix InteractionMatrix::with_row(std::size_t user, std::vector<Interaction> row) const {
  if (user >= rows_.size()) throw Error("with_row: user index out of range");
  std::sort(row.begin(), row.end(), [](const Interaction& a, const Interaction& b) { return a.item < b.item; });
  InteractionMatrix out = *this;
  out.rows_[user] = std::move(row);
  out.recount();
  return out;
}

InteractionMatrix InteractionMatrix::without_users(std::span<const Index> users) const {
  std::vector<bool> drop(rows_.size(), false);
  for (Index u : users) {
    if (u < drop.size()) drop[u] = true;
  }
  InteractionMatrix out;
  out.num_items_ = num_items_;
  out.r_max_ = r_max_;
  out.kind_ = kind_;
  std::vector<std::string> ids;
  for (std::size_t u = 0; u < rows_.size(); ++u) {
    if (drop[u]) continue;
    if (u < num_normal_) ++out.num_normal_;
    out.rows_.push_back(rows_[u]);
    if (u < user_ids_.size()) ids.push_back(user_ids_[u]);
  }
  out.recount();
  if (out.rows_.empty() || out.nnz_ == 0) throw EmptyDatasetError("no users left after removal");
  out.user_ids_ = std::move(ids);
  out.item_ids_ = item_ids_;
  return out;
}

InteractionMatrix InteractionMatrix::select_users(std::span<const Index> users) const {
  InteractionMatrix out;
  out.num_items_ = num_items_;
  out.r_max_ = r_max_;
  out.kind_ = kind_;
  for (Index u : users) out.rows_.push_back(rows_.at(u));
  out.num_normal_ = out.rows_.size();
  out.recount();
  out.item_ids_ = item_ids_;
  return out;
}

// ---- parsing ----------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  if (line.find("::") != std::string::npos) {
    std::size_t start = 0;
    while (true) {
      std::size_t pos = line.find("::", start);
      fields.push_back(line.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 2;
    }
    return fields;
  }
  std::istringstream ss(line);
  std::string f;
  while (ss >> f) fields.push_back(f);
  return fields;
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

template <typename T>
std::optional<T> parse_number(const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<RawRating> parse_movielens(std::istream& in, const std::string& source) {
  std::vector<RawRating> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;
    auto f = split_fields(line);
    if (f.size() < 3) throw ParseError(source, lineno, "expected `user item rating timestamp`");
    auto score = parse_number<double>(f[2]);
    if (!score || !(*score > 0.0)) throw ParseError(source, lineno, "bad rating '" + f[2] + "'");
    RawRating r{f[0], f[1], *score, std::nullopt};
    if (f.size() >= 4) {
      auto ts = parse_number<std::int64_t>(f[3]);
      if (!ts) throw ParseError(source, lineno, "bad timestamp '" + f[3] + "'");
      r.timestamp = *ts;
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw EmptyDatasetError(source + ": no ratings");
  return out;
}

std::vector<RawRating> parse_movielens(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_movielens(in, path.string());
}

std::vector<RawRating> parse_lastfm_tags(std::istream& in, const std::string& source) {
  std::vector<RawRating> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;
    auto f = split_fields(line);
    if (lineno == 1 && !f.empty() && !parse_number<std::int64_t>(f[0])) continue;  // header
    if (f.size() < 3) throw ParseError(source, lineno, "expected `user artist tag [timestamp]`");
    RawRating r{f[0], f[1], 1.0, std::nullopt};
    if (f.size() == 4) {
      auto ts = parse_number<std::int64_t>(f[3]);
      if (!ts) throw ParseError(source, lineno, "bad timestamp '" + f[3] + "'");
      r.timestamp = *ts;
    } else if (f.size() >= 6) {
      auto d = parse_number<std::int64_t>(f[3]);
      auto mo = parse_number<std::int64_t>(f[4]);
      auto y = parse_number<std::int64_t>(f[5]);
      if (!d || !mo || !y) throw ParseError(source, lineno, "bad day/month/year");
      r.timestamp = (*y * 12 + *mo) * 31 + *d;  // ordinal, only used for ordering
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawRating> parse_lastfm_tags(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_lastfm_tags(in, path.string());
}

// ---- preprocessing -----------------------------------------------------------

namespace {

std::vector<std::string> sorted_ids(std::vector<std::string> ids) {
  const bool numeric = std::all_of(ids.begin(), ids.end(),
                                   [](const std::string& s) { return parse_number<std::int64_t>(s).has_value(); });
  if (numeric) {
    std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
      return *parse_number<std::int64_t>(a) < *parse_number<std::int64_t>(b);
    });
  } else {
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

}  // namespace

InteractionMatrix preprocess(std::span<const RawRating> ratings, DatasetKind kind, std::size_t k_core) {
  if (k_core < 1) throw Error("k_core must be >= 1");

  // Intern ids in first-seen order, then dedup on (user, item).
  std::unordered_map<std::string, Index> user_of, item_of;
  std::vector<std::string> user_names, item_names;
  auto intern = [](auto& map, auto& names, const std::string& id) {
    auto [it, inserted] = map.try_emplace(id, static_cast<Index>(names.size()));
    if (inserted) names.push_back(id);
    return it->second;
  };
  struct Entry {
    Index user, item;
    double score;
    std::int64_t ts;
  };
  std::vector<Entry> entries;
  entries.reserve(ratings.size());
  {
    std::unordered_map<std::uint64_t, bool> seen;
    seen.reserve(ratings.size() * 2);
    for (const auto& r : ratings) {
      Index u = intern(user_of, user_names, r.user);
      Index i = intern(item_of, item_names, r.item);
      const std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | i;
      if (!seen.emplace(key, true).second) continue;
      const double s = kind == DatasetKind::implicit ? 1.0 : r.score;
      entries.push_back({u, i, s, r.timestamp.value_or(kNoTimestamp)});
    }
  }

  // Iterative k-core peeling.
  std::vector<bool> user_alive(user_names.size(), true), item_alive(item_names.size(), true);
  while (true) {
    std::vector<std::size_t> uc(user_names.size(), 0), ic(item_names.size(), 0);
    for (const auto& e : entries) {
      if (user_alive[e.user] && item_alive[e.item]) {
        ++uc[e.user];
        ++ic[e.item];
      }
    }
    bool changed = false;
    for (std::size_t u = 0; u < uc.size(); ++u) {
      if (user_alive[u] && uc[u] < k_core) user_alive[u] = false, changed = true;
    }
    for (std::size_t i = 0; i < ic.size(); ++i) {
      if (item_alive[i] && ic[i] < k_core) item_alive[i] = false, changed = true;
    }
    if (!changed) break;
  }

  auto dense_map = [](const std::vector<std::string>& names, const std::vector<bool>& alive,
                      const std::unordered_map<std::string, Index>& lookup) {
    std::vector<std::string> kept;
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (alive[k]) kept.push_back(names[k]);
    }
    kept = sorted_ids(std::move(kept));
    std::vector<Index> remap(names.size(), std::numeric_limits<Index>::max());
    for (std::size_t k = 0; k < kept.size(); ++k) remap[lookup.at(kept[k])] = static_cast<Index>(k);
    return std::make_pair(std::move(kept), std::move(remap));
  };
  auto [users, user_remap] = dense_map(user_names, user_alive, user_of);
  auto [items, item_remap] = dense_map(item_names, item_alive, item_of);

  std::vector<Triplet> triplets;
  double r_max = 0.0;
  for (const auto& e : entries) {
    if (!user_alive[e.user] || !item_alive[e.item]) continue;
    triplets.push_back({user_remap[e.user], item_remap[e.item], e.score, e.ts});
    r_max = std::max(r_max, e.score);
  }
  if (triplets.empty()) throw EmptyDatasetError("k-core filtering removed every rating");
  if (kind == DatasetKind::implicit) r_max = 1.0;

  auto m = InteractionMatrix::from_triplets(users.size(), items.size(), r_max, kind, triplets);
  m.set_ids(std::move(users), std::move(items));
  return m;
}

// ---- validation split --------------------------------------------------------

DatasetSplit split_validation(const InteractionMatrix& matrix, std::size_t holdout_per_user,
                              std::size_t negatives_per_positive, std::uint64_t seed) {
  DatasetSplit split;
  Rng rng = make_rng(seed, 0x5b11);
  std::vector<Triplet> train;
  train.reserve(matrix.nnz());
  const std::size_t n_items = matrix.num_items();

  for (std::size_t u = 0; u < matrix.num_users(); ++u) {
    auto row = matrix.row(u);
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), 0);
    const bool eligible = u < matrix.num_normal_users() && row.size() > holdout_per_user;
    if (eligible && holdout_per_user > 0) {
      // Random order first so ties (and missing timestamps) resolve by seed.
      shuffle(order, rng);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return row[a].timestamp > row[b].timestamp; });
    } else if (u < matrix.num_normal_users() && holdout_per_user > 0) {
      split.warnings.push_back("user " + std::to_string(u) + " has only " + std::to_string(row.size()) +
                               " interactions; not held out");
    }
    const std::size_t held = eligible ? holdout_per_user : 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& e = row[order[k]];
      if (k < held) {
        ValidationCase vc{static_cast<Index>(u), e.item, {}};
        const std::size_t unrated = n_items - row.size();
        const std::size_t want = std::min(negatives_per_positive, unrated);
        std::vector<bool> taken(n_items, false);
        while (vc.negatives.size() < want) {
          const Index j = static_cast<Index>(uniform_index(rng, n_items));
          if (taken[j] || matrix.has(u, j)) continue;
          taken[j] = true;
          vc.negatives.push_back(j);
        }
        split.validation.push_back(std::move(vc));
      } else {
        train.push_back({static_cast<Index>(u), e.item, e.score, e.timestamp});
      }
    }
  }
  split.train = InteractionMatrix::from_triplets(matrix.num_users(), n_items, matrix.r_max(), matrix.kind(),
                                                 train, matrix.num_normal_users());
  split.train.set_ids(matrix.user_ids(), matrix.item_ids());
  return split;
}

// ---- canonical text format ----------------------------------------------------

void write_matrix(std::ostream& out, const InteractionMatrix& m, std::size_t first_user) {
  out << m.num_users() << ' ' << m.num_items() << ' ' << m.r_max() << ' ' << to_string(m.kind());
  if (m.num_normal_users() != m.num_users()) out << ' ' << m.num_normal_users();
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t u = first_user; u < m.num_users(); ++u) {
    for (const auto& e : m.row(u)) out << u << ' ' << e.item << ' ' << e.score << '\n';
  }
}

void save_matrix(const std::filesystem::path& path, const InteractionMatrix& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_matrix(out, m);
}

InteractionMatrix read_matrix(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw EmptyDatasetError(source + ": missing header");
  std::istringstream header(line);
  std::size_t m = 0, n = 0;
  double r_max = 0;
  std::string kind;
  if (!(header >> m >> n >> r_max >> kind)) throw ParseError(source, 1, "expected `M N r_max kind`");
  std::size_t normal = m;
  header >> normal;
  std::vector<Triplet> triplets;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    std::istringstream ss(line);
    Triplet t;
    if (!(ss >> t.user >> t.item >> t.score)) throw ParseError(source, lineno, "expected `u i score`");
    triplets.push_back(t);
  }
  return InteractionMatrix::from_triplets(m, n, r_max, parse_dataset_kind(kind), triplets, normal);
}

InteractionMatrix load_matrix(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_matrix(in, path.string());
}

InteractionMatrix load_dataset(const std::filesystem::path& path, const std::string& format, std::size_t k_core) {
  if (format == "canonical") return load_matrix(path);
  if (format == "ml-100k" || format == "ml-1m" || format == "movielens") {
    return preprocess(parse_movielens(path), DatasetKind::explicit_ratings, k_core == 0 ? 1 : k_core);
  }
  if (format == "lastfm") {
    return preprocess(parse_lastfm_tags(path), DatasetKind::implicit, k_core == 0 ? 10 : k_core);
  }
  throw Error("unknown dataset format '" + format + "'");
}

}  // namespace poisonrec
