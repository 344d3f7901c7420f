#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poisonrec/common.hpp"

namespace poisonrec {

enum class DatasetKind { explicit_ratings, implicit };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

inline constexpr std::int64_t kNoTimestamp = INT64_MIN;

struct RawRating {
  std::string user;
  std::string item;
  double score = 1.0;
  std::optional<std::int64_t> timestamp;
};

struct Interaction {
  Index item = 0;
  double score = 1.0;
  std::int64_t timestamp = kNoTimestamp;
};

struct Triplet {
  Index user = 0;
  Index item = 0;
  double score = 1.0;
  std::int64_t timestamp = kNoTimestamp;
};

/// Sparse user x item rating store.
///
/// Rows are sorted by item index. Explicit scores are kept even though the
/// recommender consumes only presence/absence; feature extraction and filler
/// score generation need the raw values. Users with index >= num_normal_users()
/// were injected (fake) and are excluded from every evaluation denominator.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;

  /// Duplicated (user, item) pairs keep their first occurrence. Users at or
  /// beyond num_normal (default: all users normal) are marked as injected.
  static InteractionMatrix from_triplets(std::size_t num_users, std::size_t num_items, double r_max,
                                         DatasetKind kind, std::span<const Triplet> triplets,
                                         std::optional<std::size_t> num_normal = std::nullopt);

  std::size_t num_users() const { return rows_.size(); }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_normal_users() const { return num_normal_; }
  std::size_t nnz() const { return nnz_; }
  double r_max() const { return r_max_; }
  DatasetKind kind() const { return kind_; }
  bool empty() const { return nnz_ == 0; }

  std::span<const Interaction> row(std::size_t user) const { return rows_.at(user); }
  bool has(std::size_t user, std::size_t item) const;
  std::optional<double> score(std::size_t user, std::size_t item) const;
  /// Number of stored ratings for each item.
  const std::vector<std::uint32_t>& item_counts() const { return item_counts_; }
  std::vector<Triplet> triplets() const;

  /// Original ids for dense indices. Empty when the matrix was built from
  /// triplets without an id map; injected users never carry one.
  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  void set_ids(std::vector<std::string> user_ids, std::vector<std::string> item_ids);

  /// Appends rows as injected users (indices num_users() onward).
  InteractionMatrix with_appended_users(const std::vector<std::vector<Interaction>>& rows) const;
  /// Replaces an existing row (used to fill pending fake users in place).
  InteractionMatrix with_row(std::size_t user, std::vector<Interaction> row) const;
  /// Drops the given users and re-indexes the survivors densely, preserving
  /// order. Throws EmptyDatasetError when nothing survives.
  InteractionMatrix without_users(std::span<const Index> users) const;
  /// Keeps only the listed users (in the listed order); all of them are
  /// treated as normal.
  InteractionMatrix select_users(std::span<const Index> users) const;
  /// Keeps entries for which keep(user, interaction) is true.
  template <typename Pred>
  InteractionMatrix filter_entries(Pred keep) const {
    InteractionMatrix out = *this;
    out.nnz_ = 0;
    for (std::size_t u = 0; u < out.rows_.size(); ++u) {
      auto& row = out.rows_[u];
      std::vector<Interaction> kept;
      for (const auto& e : row) {
        if (keep(u, e)) kept.push_back(e);
      }
      row = std::move(kept);
      out.nnz_ += row.size();
    }
    out.recount();
    return out;
  }

  friend bool operator==(const InteractionMatrix& a, const InteractionMatrix& b);

 private:
  void recount();

  std::size_t num_items_ = 0;
  std::size_t num_normal_ = 0;
  std::size_t nnz_ = 0;
  double r_max_ = 1.0;
  DatasetKind kind_ = DatasetKind::implicit;
  std::vector<std::vector<Interaction>> rows_;
  std::vector<std::uint32_t> item_counts_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
};

bool operator==(const Interaction& a, const Interaction& b);

// ---- ingestion ------------------------------------------------------------

/// MovieLens rating file: `user<TAB>item<TAB>rating<TAB>timestamp` (100K) or
/// `user::item::rating::timestamp` (1M). Blank lines are ignored.
std::vector<RawRating> parse_movielens(std::istream& in, const std::string& source = "<stream>");
std::vector<RawRating> parse_movielens(const std::filesystem::path& path);

/// Last.fm tag assignments `user artist tag [timestamp | day month year]`.
/// A non-numeric first line is treated as a header. Every row yields one
/// RawRating with score 1.0; duplicates are retained.
std::vector<RawRating> parse_lastfm_tags(std::istream& in, const std::string& source = "<stream>");
std::vector<RawRating> parse_lastfm_tags(const std::filesystem::path& path);

/// Dedup, binarize (implicit kind), iterative k-core filtering, dense
/// re-indexing. Original ids are sorted (numerically when every id is an
/// integer) before indices are assigned.
InteractionMatrix preprocess(std::span<const RawRating> ratings, DatasetKind kind, std::size_t k_core);

// ---- validation split -----------------------------------------------------

struct ValidationCase {
  Index user = 0;
  Index positive = 0;
  std::vector<Index> negatives;
};

struct DatasetSplit {
  InteractionMatrix train;
  std::vector<ValidationCase> validation;
  std::vector<std::string> warnings;
};

/// Leave-most-recent-out split. Users with <= holdout_per_user interactions are
/// skipped (and noted in warnings). Negatives are distinct items the user never
/// rated.
DatasetSplit split_validation(const InteractionMatrix& matrix, std::size_t holdout_per_user,
                              std::size_t negatives_per_positive, std::uint64_t seed);

// ---- canonical text format -------------------------------------------------
//
//   M N r_max kind
//   u i score
//   ...

void write_matrix(std::ostream& out, const InteractionMatrix& m, std::size_t first_user = 0);
void save_matrix(const std::filesystem::path& path, const InteractionMatrix& m);
InteractionMatrix read_matrix(std::istream& in, const std::string& source = "<stream>");
InteractionMatrix load_matrix(const std::filesystem::path& path);

/// Loads a dataset by kind name: "ml-100k"/"ml-1m" (MovieLens, no filtering),
/// "lastfm" (tag file, implicit, 10-core), or "canonical".
InteractionMatrix load_dataset(const std::filesystem::path& path, const std::string& format,
                               std::size_t k_core = 0);

}  // namespace poisonrec
