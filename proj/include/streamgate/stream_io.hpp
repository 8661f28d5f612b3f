#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "streamgate/stream_sim.hpp"

// Line-delimited JSON stream files: one header record carrying the
// annotations, then one record per second with both frame grids, the audio
// vectors and the timing label.

namespace streamgate {

void write_stream(std::ostream& os, const StreamSample& sample);
StreamSample read_stream(std::istream& is);

void save_stream(const std::filesystem::path& path, const StreamSample& sample);
StreamSample load_stream(const std::filesystem::path& path);

// Every *.jsonl stream file in `dir`, sorted by file name.
std::vector<std::filesystem::path> list_stream_files(const std::filesystem::path& dir);
std::vector<StreamSample> load_stream_dir(const std::filesystem::path& dir);

}  // namespace streamgate
