#include "tkg/events.hpp"

#include <algorithm>
#include <array>

#include <json.hpp>

#include "tkg/graph.hpp"
#include "tkg/serialize.hpp"

namespace tkg {

namespace {

constexpr std::array<std::string_view, 6> kEventTypeNames = {"Process",  "Thread",   "File",
                                                             "Registry", "Internet", "Image"};

std::int64_t required_int(const nlohmann::json& doc, const char* key, std::size_t line) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) {
        throw SchemaError(std::string("missing field '") + key + "'", line);
    }
    if (!it->is_number_integer()) {
        throw SchemaError(std::string("field '") + key + "' must be an integer", line);
    }
    return it->get<std::int64_t>();
}

std::string required_string(const nlohmann::json& doc, const char* key, std::size_t line) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) {
        throw SchemaError(std::string("missing field '") + key + "'", line);
    }
    if (!it->is_string()) {
        throw SchemaError(std::string("field '") + key + "' must be a string", line);
    }
    return it->get<std::string>();
}

std::optional<std::int64_t> optional_int(const nlohmann::json& doc, const char* key, std::size_t line) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_number_integer()) {
        throw SchemaError(std::string("field '") + key + "' must be an integer", line);
    }
    return it->get<std::int64_t>();
}

}  // namespace

std::string_view to_string(EventType type) { return kEventTypeNames[static_cast<std::size_t>(type)]; }

std::optional<EventType> event_type_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kEventTypeNames.size(); ++i) {
        if (kEventTypeNames[i] == name) {
            return static_cast<EventType>(i);
        }
    }
    return std::nullopt;
}

AuditEvent parse_event_line(std::string_view text, std::size_t line) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("not a JSON object: ") + e.what(), line);
    }
    if (!doc.is_object()) {
        throw SchemaError("not a JSON object", line);
    }
    AuditEvent ev;
    ev.ts = required_int(doc, "ts", line);
    if (ev.ts < 0) {
        throw SchemaError("negative timestamp", line);
    }
    auto type_name = required_string(doc, "event_type", line);
    auto type = event_type_from_string(type_name);
    if (!type) {
        throw SchemaError("unknown event_type '" + type_name + "'", line);
    }
    ev.event_type = *type;
    ev.event_name = required_string(doc, "event_name", line);
    ev.pid = required_int(doc, "pid", line);
    ev.ppid = optional_int(doc, "ppid", line);
    ev.tid = optional_int(doc, "tid", line);
    ev.subject_image = required_string(doc, "subject_image", line);
    ev.object = required_string(doc, "object", line);
    ev.object_pid = optional_int(doc, "object_pid", line);
    if (ev.event_type == EventType::Process &&
        (ev.event_name == "Start" || ev.event_name == "DCStart") && !ev.object_pid) {
        throw SchemaError("process " + ev.event_name + " event without object_pid", line);
    }
    return ev;
}

std::string format_event_line(const AuditEvent& event) {
    // ordered_json keeps declaration order so output is stable byte for byte
    nlohmann::ordered_json doc;
    doc["ts"] = event.ts;
    doc["event_type"] = to_string(event.event_type);
    doc["event_name"] = event.event_name;
    doc["pid"] = event.pid;
    if (event.ppid) {
        doc["ppid"] = *event.ppid;
    }
    if (event.tid) {
        doc["tid"] = *event.tid;
    }
    doc["subject_image"] = event.subject_image;
    doc["object"] = event.object;
    if (event.object_pid) {
        doc["object_pid"] = *event.object_pid;
    }
    return doc.dump();
}

EventReader::EventReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) {
        throw Error("cannot read " + path.string());
    }
}

std::optional<AuditEvent> EventReader::next() {
    while (std::getline(in_, buffer_)) {
        ++line_;
        if (!buffer_.empty() && buffer_.back() == '\r') {
            buffer_.pop_back();
        }
        if (buffer_.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        AuditEvent ev = parse_event_line(buffer_, line_);
        if (last_ts_ && ev.ts < *last_ts_) {
            throw OrderError("timestamp " + std::to_string(ev.ts) + " precedes " +
                                 std::to_string(*last_ts_),
                             line_);
        }
        last_ts_ = ev.ts;
        return ev;
    }
    return std::nullopt;
}

std::vector<AuditEvent> read_events(const std::filesystem::path& path) {
    EventReader reader(path);
    std::vector<AuditEvent> out;
    while (auto ev = reader.next()) {
        out.push_back(std::move(*ev));
    }
    return out;
}

void write_events(const std::filesystem::path& path, std::span<const AuditEvent> events) {
    std::string text;
    for (const auto& ev : events) {
        text += format_event_line(ev);
        text.push_back('\n');
    }
    write_text_file(path, text);
}

std::span<const AuditEvent> window(std::span<const AuditEvent> events, std::int64_t t_start,
                                   std::int64_t t_end) {
    if (t_end < t_start) {
        return {};
    }
    auto lo = std::lower_bound(events.begin(), events.end(), t_start,
                               [](const AuditEvent& e, std::int64_t t) { return e.ts < t; });
    auto hi = std::upper_bound(lo, events.end(), t_end,
                               [](std::int64_t t, const AuditEvent& e) { return t < e.ts; });
    return events.subspan(static_cast<std::size_t>(lo - events.begin()),
                          static_cast<std::size_t>(hi - lo));
}

RunMeta run_meta_from_json_text(std::string_view text) {
    try {
        auto doc = nlohmann::json::parse(text);
        RunMeta meta;
        meta.technique_id = doc.at("technique_id").get<std::string>();
        meta.procedure_id = doc.at("procedure_id").get<std::string>();
        meta.initial_pid = doc.at("initial_pid").get<std::int64_t>();
        meta.t_start = doc.at("t_start").get<std::int64_t>();
        meta.t_end = doc.at("t_end").get<std::int64_t>();
        if (!is_technique_id(meta.technique_id)) {
            throw SchemaError("run meta: malformed technique_id '" + meta.technique_id + "'");
        }
        if (meta.initial_pid <= 0) {
            throw SchemaError("run meta: initial_pid must be positive");
        }
        if (meta.t_start > meta.t_end) {
            throw SchemaError("run meta: t_start after t_end");
        }
        return meta;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("run meta: ") + e.what());
    }
}

std::string run_meta_to_json_text(const RunMeta& meta) {
    nlohmann::ordered_json doc;
    doc["technique_id"] = meta.technique_id;
    doc["procedure_id"] = meta.procedure_id;
    doc["initial_pid"] = meta.initial_pid;
    doc["t_start"] = meta.t_start;
    doc["t_end"] = meta.t_end;
    return doc.dump(2) + "\n";
}

RunMeta read_run_meta(const std::filesystem::path& path) {
    return run_meta_from_json_text(read_text_file(path));
}

void write_run_meta(const std::filesystem::path& path, const RunMeta& meta) {
    write_text_file(path, run_meta_to_json_text(meta));
}

}  // namespace tkg
