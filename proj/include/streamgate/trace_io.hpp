#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "streamgate/trigger_engine.hpp"

// Line-delimited trace records: one header (sample, task, policy) then one
// record per unit (unit, p, s, triggered, emitted tokens).

namespace streamgate {

void write_trace(std::ostream& os, const SpeakTrace& trace);
// Throws DataError on malformed input.
SpeakTrace read_trace(std::istream& is);

void save_trace(const std::filesystem::path& path, const SpeakTrace& trace);
SpeakTrace load_trace(const std::filesystem::path& path);

// Every *.trace file of a directory, sorted by name.
std::vector<std::filesystem::path> list_trace_files(const std::filesystem::path& dir);

// t,p_t,s_t,trigger rows for plotting.
void write_trace_csv(std::ostream& os, const SpeakTrace& trace);

}  // namespace streamgate
