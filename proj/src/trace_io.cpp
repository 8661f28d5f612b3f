#include "streamgate/trace_io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <string>

#include <json.hpp>

#include "streamgate/config.hpp"
#include "streamgate/errors.hpp"

namespace streamgate {

using nlohmann::json;

void write_trace(std::ostream& os, const SpeakTrace& trace) {
  json header = {{"record", "header"},
                 {"version", 1},
                 {"sample_id", trace.sample_id},
                 {"task", std::string(to_string(trace.task))},
                 {"policy", to_json(trace.policy)},
                 {"units", trace.p.size()}};
  os << header.dump() << '\n';
  std::size_t next_span = 0;
  for (std::size_t t = 0; t < trace.p.size(); ++t) {
    json rec = {{"record", "unit"},
                {"unit", t},
                {"p", trace.p[t]},
                {"s", trace.s.at(t)},
                {"triggered", static_cast<bool>(trace.triggered.at(t))}};
    json spans = json::array();
    for (; next_span < trace.spans.size() && trace.spans[next_span].unit == static_cast<int>(t); ++next_span) {
      const ResponseSpan& sp = trace.spans[next_span];
      spans.push_back({{"response", sp.response},
                       {"start_unit", trace.responses.at(sp.response).start_unit},
                       {"tokens", sp.tokens},
                       {"complete", sp.complete}});
    }
    rec["tokens"] = spans;
    os << rec.dump() << '\n';
  }
  if (!os) throw DataError("failed writing trace");
}

SpeakTrace read_trace(std::istream& is) {
  SpeakTrace trace;
  std::string line;
  std::size_t units = 0;
  bool have_header = false;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      const std::string kind = rec.at("record").get<std::string>();
      if (kind == "header") {
        if (have_header) throw DataError("trace has two headers");
        if (rec.at("version").get<int>() != 1) throw DataError("unsupported trace version");
        trace.sample_id = rec.at("sample_id").get<std::string>();
        trace.task = parse_task(rec.at("task").get<std::string>());
        trace.policy = policy_from_json(rec.at("policy"));
        units = rec.at("units").get<std::size_t>();
        have_header = true;
        continue;
      }
      if (kind != "unit" || !have_header) throw DataError("unexpected trace record '" + kind + "'");
      const auto t = rec.at("unit").get<std::size_t>();
      if (t != trace.p.size()) throw DataError("trace units out of order");
      trace.p.push_back(rec.at("p").get<double>());
      trace.s.push_back(rec.at("s").get<double>());
      trace.triggered.push_back(rec.at("triggered").get<bool>());
      for (const json& sp : rec.at("tokens")) {
        ResponseSpan span;
        span.unit = static_cast<int>(t);
        span.response = sp.at("response").get<std::size_t>();
        span.tokens = sp.at("tokens").get<std::vector<int>>();
        span.complete = sp.at("complete").get<bool>();
        if (span.response > trace.responses.size()) throw DataError("trace response index skips ahead");
        if (span.response == trace.responses.size())
          trace.responses.push_back({sp.at("start_unit").get<int>(), {}, false});
        Response& r = trace.responses[span.response];
        r.tokens.insert(r.tokens.end(), span.tokens.begin(), span.tokens.end());
        r.complete = span.complete;
        trace.spans.push_back(std::move(span));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed trace: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed trace: ") + e.what());
  }
  if (!have_header) throw DataError("trace has no header");
  if (trace.p.size() != units) throw DataError("trace is truncated");
  return trace;
}

void save_trace(const std::filesystem::path& path, const SpeakTrace& trace) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_trace(out, trace);
}

SpeakTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_trace(in);
}

std::vector<std::filesystem::path> list_trace_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".trace") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void write_trace_csv(std::ostream& os, const SpeakTrace& trace) {
  os << "t,p_t,s_t,trigger\n";
  os << std::setprecision(17);
  for (std::size_t t = 0; t < trace.p.size(); ++t)
    os << t << ',' << trace.p[t] << ',' << trace.s[t] << ',' << (trace.triggered[t] ? 1 : 0) << '\n';
}

}  // namespace streamgate
