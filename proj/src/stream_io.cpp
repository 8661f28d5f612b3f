#include "streamgate/stream_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "streamgate/errors.hpp"

namespace streamgate {
namespace {

using nlohmann::json;

json tensor_rows(const Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
  return rows;
}

Tensor rows_tensor(const json& rows, std::size_t expect_rows, std::size_t expect_cols) {
  if (!rows.is_array() || rows.size() != expect_rows) throw DataError("stream record: unexpected row count");
  Tensor t(expect_rows, expect_cols);
  for (std::size_t r = 0; r < expect_rows; ++r) {
    const auto v = rows[r].get<std::vector<double>>();
    if (v.size() != expect_cols) throw DataError("stream record: unexpected vector width");
    std::copy(v.begin(), v.end(), t.row(r).begin());
  }
  return t;
}

json annotations_json(const TaskAnnotations& a) {
  json j;
  j["instruction_tokens"] = a.instruction_tokens;
  json windows = json::array();
  for (const SecondWindow& w : a.event_windows) windows.push_back({w.start, w.end});
  j["event_windows"] = windows;
  j["event_classes"] = a.event_classes;
  j["response_tokens"] = a.response_tokens;
  j["segment_boundaries"] = a.segment_boundaries;
  j["segment_classes"] = a.segment_classes;
  j["segment_captions"] = a.segment_captions;
  j["query_time_s"] = a.query_time_s ? json(*a.query_time_s) : json(nullptr);
  j["query_tokens"] = a.query_tokens;
  j["answer_tokens"] = a.answer_tokens;
  j["clue_time_s"] = a.clue_time_s ? json(*a.clue_time_s) : json(nullptr);
  return j;
}

TaskAnnotations annotations_from(const json& j, int duration_s) {
  TaskAnnotations a;
  a.instruction_tokens = j.value("instruction_tokens", std::vector<int>{});
  for (const json& w : j.value("event_windows", json::array())) {
    SecondWindow sw{w.at(0).get<int>(), w.at(1).get<int>()};
    if (sw.end < sw.start || sw.start < 0 || sw.end >= duration_s) throw DataError("invalid event window");
    a.event_windows.push_back(sw);
  }
  a.event_classes = j.value("event_classes", std::vector<int>{});
  a.response_tokens = j.value("response_tokens", std::vector<int>{});
  a.segment_boundaries = j.value("segment_boundaries", std::vector<int>{});
  for (std::size_t i = 0; i < a.segment_boundaries.size(); ++i) {
    const int b = a.segment_boundaries[i];
    if (b <= 0 || b >= duration_s || (i > 0 && b <= a.segment_boundaries[i - 1]))
      throw DataError("segment boundaries must be strictly increasing inside (0, duration)");
  }
  a.segment_classes = j.value("segment_classes", std::vector<int>{});
  a.segment_captions = j.value("segment_captions", std::vector<std::vector<int>>{});
  if (j.contains("query_time_s") && !j["query_time_s"].is_null()) a.query_time_s = j["query_time_s"].get<int>();
  a.query_tokens = j.value("query_tokens", std::vector<int>{});
  a.answer_tokens = j.value("answer_tokens", std::vector<int>{});
  if (j.contains("clue_time_s") && !j["clue_time_s"].is_null()) a.clue_time_s = j["clue_time_s"].get<int>();
  return a;
}

}  // namespace

void write_stream(std::ostream& os, const StreamSample& s) {
  const TimingLabels labels = label_timing(s);
  json header;
  header["record"] = "header";
  header["version"] = 1;
  header["sample_id"] = s.sample_id;
  header["task"] = to_string(s.task);
  header["duration_s"] = s.duration_s;
  header["dims"] = {{"d_video", s.dims.d_video},
                    {"d_audio", s.dims.d_audio},
                    {"grid_h", s.dims.grid_h},
                    {"grid_w", s.dims.grid_w}};
  header["annotations"] = annotations_json(s.annotations);
  os << header.dump() << '\n';
  for (int t = 0; t < s.duration_s; ++t) {
    const SecondFeatures& sec = s.seconds[static_cast<std::size_t>(t)];
    json rec;
    rec["record"] = "second";
    rec["t"] = t;
    json frames = json::array();
    for (const Tensor& g : sec.frames) frames.push_back(tensor_rows(g));
    rec["frames"] = frames;
    rec["audio"] = tensor_rows(sec.audio);
    rec["label"] = labels.z[static_cast<std::size_t>(t)];
    os << rec.dump() << '\n';
  }
}

StreamSample read_stream(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("stream file is empty");
  StreamSample s;
  try {
    const json header = json::parse(line);
    if (header.value("record", "") != "header") throw DataError("first stream record must be the header");
    if (header.value("version", 0) != 1) throw DataError("unsupported stream file version");
    s.sample_id = header.at("sample_id").get<std::string>();
    s.task = parse_task(header.at("task").get<std::string>());
    s.duration_s = header.at("duration_s").get<int>();
    if (s.duration_s <= 0) throw DataError("stream duration must be positive");
    const json& d = header.at("dims");
    s.dims = {d.at("d_video").get<int>(), d.at("d_audio").get<int>(), d.at("grid_h").get<int>(),
              d.at("grid_w").get<int>()};
    s.annotations = annotations_from(header.at("annotations"), s.duration_s);
    const auto cells = static_cast<std::size_t>(s.dims.grid_cells());
    for (int t = 0; t < s.duration_s; ++t) {
      if (!std::getline(is, line)) throw DataError("stream file truncated at second " + std::to_string(t));
      const json rec = json::parse(line);
      if (rec.value("record", "") != "second" || rec.at("t").get<int>() != t)
        throw DataError("stream records out of order at second " + std::to_string(t));
      SecondFeatures sec;
      const json& frames = rec.at("frames");
      if (!frames.is_array() || frames.size() != kFramesPerSecond) throw DataError("each second needs 2 frames");
      for (const json& g : frames) sec.frames.push_back(rows_tensor(g, cells, static_cast<std::size_t>(s.dims.d_video)));
      sec.audio = rows_tensor(rec.at("audio"), kAudioPerSecond, static_cast<std::size_t>(s.dims.d_audio));
      s.seconds.push_back(std::move(sec));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed stream record: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  return s;
}

void save_stream(const std::filesystem::path& path, const StreamSample& sample) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  write_stream(os, sample);
}

StreamSample load_stream(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  return read_stream(is);
}

std::vector<std::filesystem::path> list_stream_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<StreamSample> load_stream_dir(const std::filesystem::path& dir) {
  std::vector<StreamSample> out;
  for (const auto& p : list_stream_files(dir)) out.push_back(load_stream(p));
  return out;
}

}  // namespace streamgate
