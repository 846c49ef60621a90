#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tkg/error.hpp"

namespace tkg {

enum class EventType { Process, Thread, File, Registry, Internet, Image };

std::string_view to_string(EventType type);
std::optional<EventType> event_type_from_string(std::string_view name);

/// One normalized audit record: a subject process acting on an object.
/// Field names are the JSON Lines keys.
struct AuditEvent {
    std::int64_t ts = 0;  // ns since epoch
    EventType event_type = EventType::Process;
    std::string event_name;
    std::int64_t pid = 0;
    std::optional<std::int64_t> ppid;
    std::optional<std::int64_t> tid;
    std::string subject_image;
    std::string object;
    std::optional<std::int64_t> object_pid;

    friend bool operator==(const AuditEvent&, const AuditEvent&) = default;
};

class OrderError : public Error {
public:
    OrderError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Sidecar describing one captured attack run.
struct RunMeta {
    std::string technique_id;
    std::string procedure_id;
    std::int64_t initial_pid = 0;
    std::int64_t t_start = 0;
    std::int64_t t_end = 0;

    friend bool operator==(const RunMeta&, const RunMeta&) = default;
};

/// Parses one JSON line. Throws SchemaError tagged with `line`.
AuditEvent parse_event_line(std::string_view text, std::size_t line);

/// Serializes one event as a single JSON line (no trailing newline). Fields
/// are written in declaration order; absent optionals are omitted.
std::string format_event_line(const AuditEvent& event);

/// Sequential reader over a JSON Lines event file. Enforces non-decreasing
/// timestamps (OrderError) and per-line schema (SchemaError).
class EventReader {
public:
    explicit EventReader(const std::filesystem::path& path);

    std::optional<AuditEvent> next();
    std::size_t line() const noexcept { return line_; }

private:
    std::ifstream in_;
    std::string buffer_;
    std::size_t line_ = 0;
    std::optional<std::int64_t> last_ts_;
};

std::vector<AuditEvent> read_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, std::span<const AuditEvent> events);

/// Events with t_start <= ts <= t_end. Input must be time-ordered; the
/// result is a contiguous view into it.
std::span<const AuditEvent> window(std::span<const AuditEvent> events, std::int64_t t_start,
                                   std::int64_t t_end);

RunMeta read_run_meta(const std::filesystem::path& path);
void write_run_meta(const std::filesystem::path& path, const RunMeta& meta);
RunMeta run_meta_from_json_text(std::string_view text);
std::string run_meta_to_json_text(const RunMeta& meta);

}  // namespace tkg
