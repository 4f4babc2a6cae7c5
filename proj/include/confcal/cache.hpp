#pragma once

#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "confcal/completion.hpp"

namespace confcal {

struct CacheEntry {
    std::string request_digest;
    CompletionResponse response;
    std::string created_at;  // ISO-8601 UTC
};

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline json to_json(const CacheEntry& e) {
    return {{"digest", e.request_digest}, {"response", to_json(e.response)}, {"created_at", e.created_at}};
}

inline CacheEntry cache_entry_from_json(const json& j) {
    return {j.at("digest").get<std::string>(), response_from_json(j.at("response")),
            j.value("created_at", std::string{})};
}

/// Append-only JSONL response cache keyed by request digest. Lookups may run
/// concurrently; appends are serialized. The first entry for a digest wins.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                auto entry = cache_entry_from_json(json::parse(line));
                entries_.try_emplace(entry.request_digest, std::move(entry));
            } catch (const std::exception& e) {
                throw Error(ErrorCode::schema_violation,
                            path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }

    std::optional<CompletionResponse> lookup(const std::string& digest) const {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(digest);
        if (it == entries_.end()) return std::nullopt;
        return it->second.response;
    }

    void store(const std::string& digest, const CompletionResponse& response) {
        std::unique_lock lock(mutex_);
        if (entries_.contains(digest)) return;
        CacheEntry entry{digest, response, utc_timestamp()};
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::app);
        out << to_json(entry).dump() << '\n';
        out.flush();
        entries_.emplace(digest, std::move(entry));
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, CacheEntry> entries_;
};

} // namespace confcal
