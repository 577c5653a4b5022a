#pragma once

// File-access layer: JSONL corpora, atomic writes and an access recorder.

#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "fairtune/synthpg.hpp"

namespace fairtune::io {

/// Formats a double with 9 significant digits (the corpus wire precision).
std::string format_float(double v);

std::string record_to_jsonl(const synthpg::PpgRecord& r);
synthpg::PpgRecord record_from_json_line(std::string_view line);

void write_corpus(const std::filesystem::path& path, const std::vector<synthpg::PpgRecord>& records);
std::vector<synthpg::PpgRecord> read_corpus(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

struct AccessEvent {
    std::string path;
    std::string label;  // "read" or a phase marker
};

/// Process-wide recorder of corpus reads and phase markers. Disabled unless a test or the harness
/// enables it.
class AccessLog {
public:
    static AccessLog& instance();

    void enable(bool on);
    bool enabled() const;
    void clear();
    void record_read(const std::filesystem::path& path);
    void mark(std::string_view label);
    std::vector<AccessEvent> events() const;

private:
    AccessLog() = default;
    mutable std::mutex mu_;
    bool enabled_ = false;
    std::vector<AccessEvent> events_;
};

std::string normalize_path(const std::filesystem::path& p);

}  // namespace fairtune::io
