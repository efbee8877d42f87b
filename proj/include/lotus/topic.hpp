#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lotus {

/// Namespace owned by the bridge; clients may neither publish nor
/// function-subscribe below it.
inline constexpr std::string_view kReservedSegment = "$lotus";

/// A concrete topic: non-empty segments without '/', '+' or '#'.
class Topic {
 public:
  /// Throws Error{InvalidTopic}.
  static Topic parse(std::string_view text);
  static Topic from_segments(std::vector<std::string> segments);

  const std::vector<std::string>& segments() const noexcept { return segments_; }
  const std::string& str() const noexcept { return rendered_; }
  bool reserved() const noexcept { return segments_.front() == kReservedSegment; }

  friend bool operator==(const Topic& a, const Topic& b) noexcept { return a.rendered_ == b.rendered_; }

 private:
  Topic() = default;
  std::vector<std::string> segments_;
  std::string rendered_;
};

/// A subscription pattern: literal segments, '+' for exactly one segment,
/// and a trailing '#' for one or more remaining segments.
class TopicFilter {
 public:
  /// Throws Error{InvalidFilter}.
  static TopicFilter parse(std::string_view text);
  static TopicFilter from_segments(std::vector<std::string> segments);

  const std::vector<std::string>& segments() const noexcept { return segments_; }
  /// Canonical form: the segments joined by '/'.
  const std::string& str() const noexcept { return rendered_; }

  /// True if some topic under the reserved namespace could match.
  bool may_match_reserved() const noexcept;

  friend bool operator==(const TopicFilter& a, const TopicFilter& b) noexcept { return a.rendered_ == b.rendered_; }

 private:
  TopicFilter() = default;
  std::vector<std::string> segments_;
  std::string rendered_;
};

bool topic_matches(const TopicFilter& filter, const Topic& topic) noexcept;

}  // namespace lotus
