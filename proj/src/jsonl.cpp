#include "urbanln/jsonl.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace urbanln {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write file: " + tmp);
        }
        out << content;
        out.flush();
        if (!out) {
            throw IoError("write failed: " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("rename failed: " + tmp + " -> " + path + " (" + ec.message() + ")");
    }
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open file: " + path);
    }
    std::vector<json> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw DataError(path + ":" + std::to_string(lineno) + ": invalid JSON record");
        }
        out.push_back(std::move(j));
    }
    return out;
}

void write_jsonl(const std::string& path, const std::vector<json>& records) {
    std::string buf;
    for (const auto& r : records) {
        buf += r.dump();
        buf += '\n';
    }
    write_text_atomic(path, buf);
}

json parse_json(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw DataError("invalid JSON in " + what);
    }
    return j;
}

} // namespace urbanln
