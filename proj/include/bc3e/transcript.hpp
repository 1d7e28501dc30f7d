#pragma once

// Session transcript: every wire payload seen by a node, with direction
// metadata, written as one JSON object per line. The privacy audit runs on
// these files.

#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "bc3e/errors.hpp"

namespace bc3e {

struct TranscriptEntry {
    std::uint64_t seq = 0;
    std::string direction;  // to_aggregator | from_aggregator | site_to_site
    int endpoint = -1;      // site id on the far end, -1 if unknown
    std::string payload;    // raw UTF-8 payload bytes
};

class TranscriptRecorder {
public:
    void record(std::string direction, int endpoint, const std::string& payload) {
        std::lock_guard lock(mutex_);
        entries_.push_back({next_seq_++, std::move(direction), endpoint, payload});
    }

    const std::vector<TranscriptEntry>& entries() const { return entries_; }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ValidationError("cannot write transcript: " + path);
        for (const auto& e : entries_) {
            nlohmann::json line{{"seq", e.seq},
                                {"direction", e.direction},
                                {"endpoint", e.endpoint},
                                {"bytes", e.payload.size()},
                                {"payload", e.payload}};
            out << line.dump() << "\n";
        }
    }

private:
    mutable std::mutex mutex_;
    std::vector<TranscriptEntry> entries_;
    std::uint64_t next_seq_ = 0;
};

inline std::vector<TranscriptEntry> load_transcript(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read transcript: " + path);
    std::vector<TranscriptEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("transcript parse error at line " +
                                  std::to_string(line_no) + ": " + e.what());
        }
        TranscriptEntry entry;
        entry.seq = doc.at("seq").get<std::uint64_t>();
        entry.direction = doc.at("direction").get<std::string>();
        entry.endpoint = doc.at("endpoint").get<int>();
        entry.payload = doc.at("payload").get<std::string>();
        entries.push_back(std::move(entry));
    }
    return entries;
}

}  // namespace bc3e
