#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "forecast/datastore.hpp"
#include "forecast/errors.hpp"

namespace forecast::datastore {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

int parse_int(std::string_view text, std::size_t pos, std::size_t len) {
  int value = 0;
  if (pos + len > text.size()) throw IngestError("malformed timestamp '" + std::string(text) + "'");
  const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
  if (ec != std::errc() || ptr != text.data() + pos + len) {
    throw IngestError("malformed timestamp '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

TimePoint parse_iso8601(std::string_view text) {
  using namespace std::chrono;
  if (!text.empty() && (text.back() == 'Z' || text.back() == 'z')) text.remove_suffix(1);
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
    throw IngestError("malformed timestamp '" + std::string(text) + "'");
  }
  const year_month_day ymd{year{parse_int(text, 0, 4)}, month{static_cast<unsigned>(parse_int(text, 5, 2))},
                           day{static_cast<unsigned>(parse_int(text, 8, 2))}};
  if (!ymd.ok()) throw IngestError("invalid date '" + std::string(text) + "'");
  int hh = 0, mm = 0, ss = 0;
  if (text.size() > 10) {
    if (text[10] != 'T' && text[10] != ' ') throw IngestError("malformed timestamp '" + std::string(text) + "'");
    hh = parse_int(text, 11, 2);
    if (text.size() > 13) {
      if (text[13] != ':') throw IngestError("malformed timestamp '" + std::string(text) + "'");
      mm = parse_int(text, 14, 2);
    }
    if (text.size() > 16) {
      if (text[16] != ':') throw IngestError("malformed timestamp '" + std::string(text) + "'");
      ss = parse_int(text, 17, 2);
      if (text.size() != 19) throw IngestError("malformed timestamp '" + std::string(text) + "'");
    }
    if (hh > 23 || mm > 59 || ss > 60) throw IngestError("invalid time of day '" + std::string(text) + "'");
  }
  return TimePoint{sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss}};
}

std::string format_iso8601(TimePoint t) {
  using namespace std::chrono;
  const sys_days day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buffer;
}

StationSeries ingest_stations(const std::filesystem::path& path, std::optional<Duration> step) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open station file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty station file: " + path.string());
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "station_id" || header[1] != "lat" || header[2] != "lon" ||
      header[3] != "timestamp") {
    throw IngestError("station CSV header must be station_id,lat,lon,timestamp,<feature>...");
  }
  const std::size_t d = header.size() - 4;

  struct Row {
    std::size_t station;
    TimePoint time;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  std::vector<std::string> ids;
  std::vector<std::array<double, 2>> locations;
  std::map<std::string, std::size_t> station_index;
  std::set<std::pair<std::size_t, TimePoint>> seen;
  std::size_t line_no = 1;
  std::size_t missing_values = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IngestError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(fields.size()));
    }
    double lat = 0, lon = 0;
    if (!parse_double(fields[1], lat) || !parse_double(fields[2], lon) || std::abs(lat) > 90.0 || lon < -180.0 ||
        lon > 360.0) {
      throw IngestError("line " + std::to_string(line_no) + ": unparseable coordinates '" + fields[1] + "," +
                        fields[2] + "'");
    }
    auto [it, inserted] = station_index.emplace(fields[0], ids.size());
    if (inserted) {
      ids.push_back(fields[0]);
      locations.push_back({lat, lon});
    } else if (locations[it->second][0] != lat || locations[it->second][1] != lon) {
      throw IngestError("line " + std::to_string(line_no) + ": station '" + fields[0] + "' changes location");
    }
    Row row{it->second, parse_iso8601(fields[3]), std::vector<double>(d)};
    if (!seen.emplace(row.station, row.time).second) {
      throw IngestError("line " + std::to_string(line_no) + ": duplicate row for station '" + fields[0] + "' at " +
                        fields[3]);
    }
    for (std::size_t k = 0; k < d; ++k) {
      const std::string& f = fields[4 + k];
      double v = 0;
      if (f.empty() || f == "nan" || f == "NaN" || f == "NA" || !parse_double(f, v) || !std::isfinite(v)) {
        if (!f.empty() && f != "nan" && f != "NaN" && f != "NA" && !parse_double(f, v)) {
          throw IngestError("line " + std::to_string(line_no) + ": unparseable value '" + f + "'");
        }
        v = std::numeric_limits<double>::quiet_NaN();
        ++missing_values;
      }
      row.values[k] = v;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IngestError("station file has no data rows: " + path.string());
  for (std::size_t a = 0; a < locations.size(); ++a)
    for (std::size_t b = a + 1; b < locations.size(); ++b)
      if (locations[a] == locations[b]) {
        throw IngestError("stations '" + ids[a] + "' and '" + ids[b] + "' share a location");
      }

  std::set<TimePoint> times;
  for (const Row& r : rows) times.insert(r.time);
  Duration resolved = step.value_or(Duration{0});
  if (!step) {
    resolved = std::chrono::hours(3);
    if (times.size() > 1) {
      resolved = Duration::max();
      for (auto it = std::next(times.begin()); it != times.end(); ++it)
        resolved = std::min(resolved, *it - *std::prev(it));
    }
  }
  if (resolved.count() <= 0) throw IngestError("station frequency must be positive");
  const TimePoint start = *times.begin();
  const std::size_t steps = static_cast<std::size_t>((*times.rbegin() - start) / resolved) + 1;

  StationSeries out;
  out.ids = ids;
  out.locations = locations;
  for (std::size_t k = 0; k < d; ++k) out.features.push_back({header[4 + k], ""});
  out.start = start;
  out.step = resolved;
  const std::size_t n = ids.size();
  out.values = Tensor({steps, d, n}, std::numeric_limits<double>::quiet_NaN());
  for (const Row& r : rows) {
    const auto offset = r.time - start;
    if (offset % resolved != Duration{0}) {
      throw IngestError("timestamp " + format_iso8601(r.time) + " is off the " + std::to_string(resolved.count()) +
                        " s grid");
    }
    const auto t = static_cast<std::size_t>(offset / resolved);
    for (std::size_t k = 0; k < d; ++k) out.values[(t * d + k) * n + r.station] = r.values[k];
  }
  out.gaps.missing_rows = steps * n - rows.size();
  out.gaps.missing_values = missing_values;
  return out;
}

}  // namespace forecast::datastore
