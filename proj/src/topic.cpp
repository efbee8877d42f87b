#include "lotus/topic.hpp"

#include "lotus/error.hpp"

namespace lotus {
namespace {

std::vector<std::string> split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find('/', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      return out;
    }
    out.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string join(const std::vector<std::string>& segments) {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) out.push_back('/');
    out += segments[i];
  }
  return out;
}

}  // namespace

Topic Topic::parse(std::string_view text) {
  if (text.empty()) throw Error(ErrorCode::InvalidTopic, "empty topic");
  return from_segments(split(text));
}

Topic Topic::from_segments(std::vector<std::string> segments) {
  if (segments.empty()) throw Error(ErrorCode::InvalidTopic, "topic has no segments");
  for (const auto& s : segments) {
    if (s.empty()) throw Error(ErrorCode::InvalidTopic, "empty topic segment");
    if (s.find_first_of("/+#") != std::string::npos) {
      throw Error(ErrorCode::InvalidTopic, "topic segment contains '/', '+' or '#': " + s);
    }
  }
  Topic t;
  t.rendered_ = join(segments);
  t.segments_ = std::move(segments);
  return t;
}

TopicFilter TopicFilter::parse(std::string_view text) {
  if (text.empty()) throw Error(ErrorCode::InvalidFilter, "empty filter");
  return from_segments(split(text));
}

TopicFilter TopicFilter::from_segments(std::vector<std::string> segments) {
  if (segments.empty()) throw Error(ErrorCode::InvalidFilter, "filter has no segments");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (s.empty()) throw Error(ErrorCode::InvalidFilter, "empty filter segment");
    if (s == "+") continue;
    if (s == "#") {
      if (i + 1 != segments.size()) throw Error(ErrorCode::InvalidFilter, "'#' must be the last segment");
      continue;
    }
    if (s.find_first_of("/+#") != std::string::npos) {
      throw Error(ErrorCode::InvalidFilter, "wildcards must occupy a whole segment: " + s);
    }
  }
  TopicFilter f;
  f.rendered_ = join(segments);
  f.segments_ = std::move(segments);
  return f;
}

bool TopicFilter::may_match_reserved() const noexcept {
  const auto& first = segments_.front();
  return first == kReservedSegment || first == "+" || first == "#";
}

bool topic_matches(const TopicFilter& filter, const Topic& topic) noexcept {
  const auto& fs = filter.segments();
  const auto& ts = topic.segments();
  std::size_t i = 0;
  for (; i < fs.size(); ++i) {
    if (fs[i] == "#") return ts.size() > i;
    if (i >= ts.size()) return false;
    if (fs[i] != "+" && fs[i] != ts[i]) return false;
  }
  return i == ts.size();
}

}  // namespace lotus
