#include "edgestream/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace edgestream {

Json parse_json(std::string_view text, const std::string& origin) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    // Translate the byte offset into line:column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (const auto p = what.find("parse error"); p != std::string::npos) what = what.substr(p);
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }
}

Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str(), path.string());
}

Duration ms_to_duration(double ms) {
  if (!std::isfinite(ms)) throw ConfigError("duration must be finite");
  return Duration(static_cast<std::int64_t>(std::llround(ms * 1000.0)));
}

double duration_to_ms(Duration d) { return static_cast<double>(d.count()) / 1000.0; }

Bound bound_ms(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ConfigError(std::string("'") + key + "' must be a number of milliseconds");
  return ms_to_duration(it->get<double>());
}

Json topic_to_json(const TopicConfig& t) {
  Json j;
  j["topic"] = t.topic.str();
  j["streams"] = Json::array();
  for (const auto& s : t.streams) j["streams"].push_back(s.str());
  Json mode;
  if (const auto* tt = std::get_if<TimeTriggered>(&t.join_mode)) {
    mode["mode"] = "time";
    mode["window_ms"] = duration_to_ms(tt->window);
  } else if (const auto* h = std::get_if<Hybrid>(&t.join_mode)) {
    mode["mode"] = "hybrid";
    mode["min_interval_ms"] = duration_to_ms(h->min_interval);
  } else {
    mode["mode"] = "data";
  }
  j["join"] = mode;
  auto put = [&](const char* key, Bound b) { j[key] = b ? Json(duration_to_ms(*b)) : Json(nullptr); };
  put("max_skew_ms", t.max_skew);
  put("freshness_ms", t.freshness_threshold);
  put("target_prediction_frequency_ms", t.target_prediction_frequency);
  j["time_basis"] = t.time_basis == TimeBasis::event_time ? "event" : "processing";
  return j;
}

TopicConfig topic_from_json(const Json& j) {
  try {
    TopicConfig t{TopicId(j.at("topic").get<std::string>()), {}};
    for (const auto& s : j.at("streams")) t.streams.emplace_back(s.get<std::string>());
    if (const auto it = j.find("join"); it != j.end()) {
      const auto mode = it->value("mode", std::string("data"));
      if (mode == "time") {
        t.join_mode = TimeTriggered{ms_to_duration(it->at("window_ms").get<double>())};
      } else if (mode == "hybrid") {
        t.join_mode = Hybrid{ms_to_duration(it->at("min_interval_ms").get<double>())};
      } else if (mode != "data") {
        throw ConfigError("unknown join mode '" + mode + "'");
      }
    }
    t.max_skew = bound_ms(j, "max_skew_ms");
    t.freshness_threshold = bound_ms(j, "freshness_ms");
    t.target_prediction_frequency = bound_ms(j, "target_prediction_frequency_ms");
    const auto basis = j.value("time_basis", std::string("event"));
    if (basis == "processing") {
      t.time_basis = TimeBasis::processing_time;
    } else if (basis != "event") {
      throw ConfigError("unknown time basis '" + basis + "'");
    }
    t.validate();
    return t;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("topic config: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("topic config: ") + e.what());
  }
}

}  // namespace edgestream
