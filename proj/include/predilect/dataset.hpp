// Segment pool and labeled-query persistence (JSON Lines).
//
// A dataset directory holds three files:
//   dataset.json    header sidecar: schema version and RNG algorithm id
//   segments.jsonl  one TrajectorySegment per line
//   shq.jsonl       one SentimentHighlightedQuery per line; segment_a and
//                   segment_b hold segment ids resolved against segments.jsonl
#ifndef PREDILECT_DATASET_HPP_
#define PREDILECT_DATASET_HPP_

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "predilect/core.hpp"

namespace predilect {

inline constexpr int kDatasetSchemaVersion = 1;

class DatasetError : public Error {
 public:
  using Error::Error;
};

class SchemaVersionError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class DatasetStore {
 public:
  // Segments are deduplicated by id; returns the stored pointer.
  SegmentPtr add_segment(SegmentPtr segment);
  // Registers the query's segments as well.
  void add_shq(SentimentHighlightedQuery shq);

  SegmentPtr find_segment(const std::string& id) const;
  const std::vector<SegmentPtr>& segments() const { return segments_; }
  const std::vector<SentimentHighlightedQuery>& labeled() const {
    return labeled_;
  }

  bool operator==(const DatasetStore& other) const;

 private:
  std::vector<SegmentPtr> segments_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<SentimentHighlightedQuery> labeled_;
};

void save_dataset(const DatasetStore& store, const std::filesystem::path& dir);
DatasetStore load_dataset(const std::filesystem::path& dir);

// Single-writer append log over a dataset directory, for incremental
// collection. Thread-safe.
class DatasetAppender {
 public:
  // Creates the directory and header if missing; existing records are kept.
  explicit DatasetAppender(std::filesystem::path dir);

  void append_segment(const TrajectorySegment& segment);
  // Writes any of the query's segments not yet on disk, then the query.
  void append_shq(const SentimentHighlightedQuery& shq);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void append_segment_locked(const TrajectorySegment& segment);

  std::mutex mu_;
  std::filesystem::path dir_;
  std::ofstream segments_;
  std::ofstream shq_;
  std::unordered_map<std::string, bool> written_;
};

}  // namespace predilect

#endif  // PREDILECT_DATASET_HPP_
