#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "belab/common.hpp"

namespace belab {

// CHAT transcript subset: "@" headers, "*XXX:" main tiers, "%xxx:" dependent
// tiers, tab-led continuation lines. Everything else is a parse error.

struct Utterance {
    std::string speaker;  // 3-letter code
    std::string text;
};

struct Transcript {
    std::string participant_id;
    Label label = Label::control;
    std::vector<Utterance> utterances;
};

// participant_id and label are not part of the file format; callers attach
// them from the labels CSV.
Transcript parse_chat(std::string_view file_text);

// Joins the selected speakers' utterances with single spaces, dropping
// [bracketed] annotation spans, &-prefixed fragment codes, and the
// xxx/yyy unintelligible markers. Empty speaker list selects everyone.
std::string flatten(const Transcript& t, const std::vector<std::string>& speakers = {});

}  // namespace belab
