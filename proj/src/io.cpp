#include "fairtune/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fairtune::io {

std::string format_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string record_to_jsonl(const synthpg::PpgRecord& r) {
    std::string s;
    s.reserve(32 + r.signal.size() * 16);
    s += "{\"subject_id\":";
    s += nlohmann::json(r.subject_id).dump();
    s += ",\"dataset\":";
    s += nlohmann::json(r.dataset).dump();
    s += ",\"gender\":\"";
    s += gender_code(r.gender);
    s += "\",\"hr_bpm\":";
    s += format_float(r.hr_bpm);
    s += ",\"signal\":[";
    for (std::size_t i = 0; i < r.signal.size(); ++i) {
        if (i) s += ',';
        s += format_float(r.signal[i]);
    }
    s += "]}";
    return s;
}

synthpg::PpgRecord record_from_json_line(std::string_view line) {
    synthpg::PpgRecord r;
    try {
        const auto j = nlohmann::json::parse(line);
        r.subject_id = j.at("subject_id").get<std::string>();
        r.dataset = j.at("dataset").get<std::string>();
        r.gender = parse_gender(j.at("gender").get<std::string>());
        r.hr_bpm = j.at("hr_bpm").get<double>();
        r.signal = j.at("signal").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("corpus record: ") + e.what());
    }
    return r;
}

void write_corpus(const std::filesystem::path& path, const std::vector<synthpg::PpgRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += record_to_jsonl(r);
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<synthpg::PpgRecord> read_corpus(const std::filesystem::path& path) {
    AccessLog::instance().record_read(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open corpus " + path.string());
    std::vector<synthpg::PpgRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json_line(line));
        } catch (const Error& e) {
            fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (in.bad()) fail(ErrorKind::Io, "read error on " + path.string());
    return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) fail(ErrorKind::Io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::Io, "rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string normalize_path(const std::filesystem::path& p) {
    std::error_code ec;
    auto canon = std::filesystem::weakly_canonical(p, ec);
    return ec ? p.lexically_normal().string() : canon.string();
}

AccessLog& AccessLog::instance() {
    static AccessLog log;
    return log;
}

void AccessLog::enable(bool on) {
    std::lock_guard lock(mu_);
    enabled_ = on;
}

bool AccessLog::enabled() const {
    std::lock_guard lock(mu_);
    return enabled_;
}

void AccessLog::clear() {
    std::lock_guard lock(mu_);
    events_.clear();
}

void AccessLog::record_read(const std::filesystem::path& path) {
    std::lock_guard lock(mu_);
    if (enabled_) events_.push_back({normalize_path(path), "read"});
}

void AccessLog::mark(std::string_view label) {
    std::lock_guard lock(mu_);
    if (enabled_) events_.push_back({"", std::string(label)});
}

std::vector<AccessEvent> AccessLog::events() const {
    std::lock_guard lock(mu_);
    return events_;
}

}  // namespace fairtune::io
