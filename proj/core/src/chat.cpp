#include "belab/chat.hpp"

#include <algorithm>
#include <sstream>

namespace belab {

namespace {

bool is_upper3(std::string_view s) {
    return s.size() == 3 && std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return c >= 'A' && c <= 'Z';
    });
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
    throw DataError("line " + std::to_string(line_no) + ": " + what);
}

std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_ascii_space(s[b])) ++b;
    while (e > b && is_ascii_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

}  // namespace

Transcript parse_chat(std::string_view file_text) {
    Transcript t;
    bool seen_header = false;
    enum class Tier { none, main, dependent } last = Tier::none;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= file_text.size()) {
        std::size_t nl = file_text.find('\n', pos);
        if (nl == std::string_view::npos) nl = file_text.size();
        std::string_view line = file_text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = nl + 1;
        ++line_no;
        if (pos > file_text.size() && line.empty()) break;

        if (line.empty()) continue;
        char c = line.front();
        if (c == '@') {
            seen_header = true;
            last = Tier::none;
        } else if (c == '*') {
            if (!seen_header) parse_fail(line_no, "main tier before any header");
            std::size_t colon = line.find(':');
            if (colon == std::string_view::npos || !is_upper3(line.substr(1, colon - 1))) {
                parse_fail(line_no, "malformed main tier marker");
            }
            t.utterances.push_back({std::string(line.substr(1, colon - 1)),
                                    std::string(trim(line.substr(colon + 1)))});
            last = Tier::main;
        } else if (c == '%') {
            std::size_t colon = line.find(':');
            if (colon == std::string_view::npos || colon == 1) {
                parse_fail(line_no, "malformed dependent tier marker");
            }
            last = Tier::dependent;
        } else if (c == '\t') {
            if (last == Tier::none) parse_fail(line_no, "continuation line without a tier");
            if (last == Tier::main) {
                auto& text = t.utterances.back().text;
                std::string_view cont = trim(line);
                if (!cont.empty()) {
                    if (!text.empty()) text.push_back(' ');
                    text.append(cont);
                }
            }
            // dependent-tier continuations are dropped with their tier
        } else {
            parse_fail(line_no, "expected header, tier, or continuation");
        }
    }
    return t;
}

std::string flatten(const Transcript& t, const std::vector<std::string>& speakers) {
    std::ostringstream joined;
    for (const auto& u : t.utterances) {
        if (!speakers.empty() &&
            std::find(speakers.begin(), speakers.end(), u.speaker) == speakers.end()) {
            continue;
        }
        std::string no_brackets;
        no_brackets.reserve(u.text.size());
        std::size_t i = 0;
        while (i < u.text.size()) {
            if (u.text[i] == '[') {
                std::size_t close = u.text.find(']', i + 1);
                i = (close == std::string::npos) ? u.text.size() : close + 1;
            } else {
                no_brackets.push_back(u.text[i++]);
            }
        }
        for (auto tok : split_whitespace(no_brackets)) {
            if (tok.front() == '&' || tok == "xxx" || tok == "yyy") continue;
            joined << tok << ' ';
        }
    }
    return trim_collapse_whitespace(joined.str());
}

}  // namespace belab
