#include "predilect/dataset.hpp"

#include <sstream>

#include "predilect/rng.hpp"
#include "predilect/serialization.hpp"

namespace predilect {

namespace fs = std::filesystem;

namespace {

constexpr const char* kHeaderFile = "dataset.json";
constexpr const char* kSegmentsFile = "segments.jsonl";
constexpr const char* kShqFile = "shq.jsonl";

Json header_json() {
  return Json{{"schema_version", kDatasetSchemaVersion},
              {"rng_algorithm", std::string(kRngAlgorithm)},
              {"files", {kSegmentsFile, kShqFile}}};
}

void write_header(const fs::path& dir) {
  std::ofstream out(dir / kHeaderFile, std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + (dir / kHeaderFile).string());
  out << header_json().dump() << '\n';
}

std::ofstream open_for_write(const fs::path& path, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
  return out;
}

void check_header(const fs::path& dir) {
  const fs::path path = dir / kHeaderFile;
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  Json header;
  try {
    in >> header;
  } catch (const Json::exception& e) {
    throw DatasetError(path.string() + ": malformed header: " + e.what());
  }
  const int version = header.value("schema_version", -1);
  if (version != kDatasetSchemaVersion) {
    throw SchemaVersionError(path.string() + ": unsupported schema version " +
                             std::to_string(version) + " (expected " +
                             std::to_string(kDatasetSchemaVersion) + ")");
  }
}

// Calls fn(json, line_number) for each line. The whole file must parse.
template <typename Fn>
void read_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      fn(Json::parse(line), line_no);
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) +
                         ": malformed record: " + e.what());
    } catch (const DatasetError&) {
      throw;
    } catch (const Error& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) +
                         ": invalid record: " + e.what());
    }
  }
}

}  // namespace

SegmentPtr DatasetStore::add_segment(SegmentPtr segment) {
  auto it = index_.find(segment->segment_id);
  if (it != index_.end()) return segments_[it->second];
  index_.emplace(segment->segment_id, segments_.size());
  segments_.push_back(std::move(segment));
  return segments_.back();
}

void DatasetStore::add_shq(SentimentHighlightedQuery shq) {
  shq.segment_a = add_segment(shq.segment_a);
  shq.segment_b = add_segment(shq.segment_b);
  labeled_.push_back(std::move(shq));
}

SegmentPtr DatasetStore::find_segment(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : segments_[it->second];
}

bool DatasetStore::operator==(const DatasetStore& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (!(*segments_[i] == *other.segments_[i])) return false;
  }
  return labeled_ == other.labeled_;
}

void save_dataset(const DatasetStore& store, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create " + dir.string() + ": " +
                             ec.message());
  write_header(dir);
  {
    auto out = open_for_write(dir / kSegmentsFile, std::ios::trunc);
    for (const auto& s : store.segments()) out << segment_to_json(*s).dump() << '\n';
    if (!out) throw DatasetError("write failed: " + (dir / kSegmentsFile).string());
  }
  {
    auto out = open_for_write(dir / kShqFile, std::ios::trunc);
    for (const auto& q : store.labeled()) out << shq_to_json(q).dump() << '\n';
    if (!out) throw DatasetError("write failed: " + (dir / kShqFile).string());
  }
}

DatasetStore load_dataset(const fs::path& dir) {
  check_header(dir);
  DatasetStore store;
  read_jsonl(dir / kSegmentsFile, [&](const Json& j, int) {
    store.add_segment(std::make_shared<const TrajectorySegment>(
        segment_from_json(j)));
  });
  read_jsonl(dir / kShqFile, [&](const Json& j, int) {
    SentimentHighlightedQuery shq;
    auto resolve = [&](const char* field) {
      const auto id = j.at(field).get<std::string>();
      SegmentPtr seg = store.find_segment(id);
      if (!seg) throw DatasetError(std::string(field) + " references unknown segment " + id);
      return seg;
    };
    try {
      shq.segment_a = resolve("segment_a");
      shq.segment_b = resolve("segment_b");
    } catch (const DatasetError& e) {
      throw Error(e.what());
    }
    shq.w = PreferenceLabel::from_value(j.at("w").get<double>());
    for (const auto& h : j.at("positives")) shq.positives.push_back(highlight_from_json(h));
    for (const auto& h : j.at("negatives")) shq.negatives.push_back(highlight_from_json(h));
    if (!j.at("raw_prompt").is_null()) shq.raw_prompt = j["raw_prompt"].get<std::string>();
    if (!j.at("raw_response").is_null()) shq.raw_response = j["raw_response"].get<std::string>();
    store.add_shq(std::move(shq));
  });
  return store;
}

DatasetAppender::DatasetAppender(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw DatasetError("cannot create " + dir_.string());
  if (fs::exists(dir_ / kHeaderFile)) {
    check_header(dir_);
    read_jsonl(dir_ / kSegmentsFile, [&](const Json& j, int) {
      written_[j.at("segment_id").get<std::string>()] = true;
    });
  } else {
    write_header(dir_);
  }
  segments_ = open_for_write(dir_ / kSegmentsFile, std::ios::app);
  shq_ = open_for_write(dir_ / kShqFile, std::ios::app);
}

void DatasetAppender::append_segment_locked(const TrajectorySegment& segment) {
  if (written_.count(segment.segment_id)) return;
  segments_ << segment_to_json(segment).dump() << '\n';
  segments_.flush();
  if (!segments_) throw DatasetError("append failed: " + (dir_ / kSegmentsFile).string());
  written_[segment.segment_id] = true;
}

void DatasetAppender::append_segment(const TrajectorySegment& segment) {
  std::lock_guard<std::mutex> lock(mu_);
  append_segment_locked(segment);
}

void DatasetAppender::append_shq(const SentimentHighlightedQuery& shq) {
  std::lock_guard<std::mutex> lock(mu_);
  append_segment_locked(*shq.segment_a);
  append_segment_locked(*shq.segment_b);
  shq_ << shq_to_json(shq).dump() << '\n';
  shq_.flush();
  if (!shq_) throw DatasetError("append failed: " + (dir_ / kShqFile).string());
}

}  // namespace predilect
