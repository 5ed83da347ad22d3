#include "latentlm/sequence.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>

#include "latentlm/errors.hpp"

namespace latentlm {

TokenId Vocabulary::class_token(std::size_t c) const {
    if (c >= n_classes_) throw IndexError("vocabulary: class " + std::to_string(c) + " out of range");
    return token(static_cast<std::uint32_t>(kReserved + c));
}

TokenId Vocabulary::text_token(std::size_t i) const {
    if (i >= n_text_) throw IndexError("vocabulary: text token " + std::to_string(i) + " out of range");
    return token(static_cast<std::uint32_t>(kReserved + n_classes_ + i));
}

bool Vocabulary::is_class(TokenId id) const { return raw(id) >= kReserved && raw(id) < kReserved + n_classes_; }

bool Vocabulary::is_text(TokenId id) const { return raw(id) >= kReserved + n_classes_ && raw(id) < size(); }

std::size_t Vocabulary::class_of(TokenId id) const {
    if (!is_class(id)) throw VocabularyError("vocabulary: token " + std::to_string(raw(id)) + " is not a class");
    return raw(id) - kReserved;
}

std::size_t Vocabulary::text_index(TokenId id) const {
    if (!is_text(id)) throw VocabularyError("vocabulary: token " + std::to_string(raw(id)) + " is not text");
    return raw(id) - kReserved - n_classes_;
}

namespace {
constexpr std::array<std::string_view, Vocabulary::kReserved> kMarkers = {
    "<PAD>", "<BOS>", "<EOS>", "<BOD>", "<EOD>", "<UNCOND>"};
}

std::string_view marker_name(TokenId id) { return raw(id) < kMarkers.size() ? kMarkers[raw(id)] : std::string_view{}; }

void validate_sequence(const MixedSequence& seq, const Vocabulary& vocab, std::size_t d_latent, std::size_t max_len,
                       bool allow_open_block) {
    if (seq.size() > max_len) {
        throw CapacityError("sequence of length " + std::to_string(seq.size()) + " exceeds max_seq_len " +
                            std::to_string(max_len));
    }
    bool open = false;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto at = " at position " + std::to_string(i);
        if (const auto* id = std::get_if<TokenId>(&seq[i])) {
            if (!vocab.contains(*id)) {
                throw VocabularyError("unknown token id " + std::to_string(raw(*id)) + at + " (vocabulary size " +
                                      std::to_string(vocab.size()) + ")");
            }
            if (*id == Vocabulary::BOD) {
                if (open) throw StructureError("nested <BOD>" + at);
                open = true;
            } else if (*id == Vocabulary::EOD) {
                if (!open) throw StructureError("<EOD> without an open block" + at);
                open = false;
            } else if (open) {
                throw StructureError("discrete token inside a latent block" + at);
            }
        } else {
            const auto& z = std::get<LatentVec>(seq[i]);
            if (!open) throw StructureError("continuous element outside <BOD>/<EOD>" + at);
            if (z.size() != d_latent) {
                throw DimensionError("latent of length " + std::to_string(z.size()) + at + ", expected " +
                                     std::to_string(d_latent));
            }
        }
    }
    if (open && !allow_open_block) throw StructureError("unterminated <BOD> block");
}

std::string format_sequence(const MixedSequence& seq) {
    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += ' ';
        if (const auto* id = std::get_if<TokenId>(&seq[i])) {
            auto name = marker_name(*id);
            out += name.empty() ? std::to_string(raw(*id)) : std::string(name);
        } else {
            out += '[';
            const auto& z = std::get<LatentVec>(seq[i]);
            for (std::size_t j = 0; j < z.size(); ++j) {
                if (j) out += ',';
                std::snprintf(buf, sizeof buf, "%.17g", z[j]);
                out += buf;
            }
            out += ']';
        }
    }
    return out;
}

namespace {

double parse_double(std::string_view s, std::size_t offset) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError("sequence text: bad number '" + std::string(s) + "' at offset " + std::to_string(offset));
    }
    return v;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

MixedSequence parse_sequence(std::string_view text) {
    MixedSequence seq;
    std::size_t i = 0;
    while (i < text.size()) {
        if (std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        if (text[i] == '[') {
            const auto close = text.find(']', i);
            if (close == std::string_view::npos) {
                throw FormatError("sequence text: unterminated '[' at offset " + std::to_string(i));
            }
            LatentVec z;
            auto body = text.substr(i + 1, close - i - 1);
            std::size_t pos = 0;
            while (!trim(body).empty() && pos <= body.size()) {
                auto comma = body.find(',', pos);
                if (comma == std::string_view::npos) comma = body.size();
                z.push_back(parse_double(trim(body.substr(pos, comma - pos)), i + 1 + pos));
                pos = comma + 1;
            }
            seq.emplace_back(std::move(z));
            i = close + 1;
            continue;
        }
        std::size_t end = i;
        while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
        auto word = text.substr(i, end - i);
        bool matched = false;
        for (std::size_t m = 0; m < kMarkers.size(); ++m) {
            if (word == kMarkers[m]) {
                seq.emplace_back(token(static_cast<std::uint32_t>(m)));
                matched = true;
            }
        }
        if (!matched) {
            std::uint32_t id = 0;
            auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), id);
            if (ec != std::errc{} || ptr != word.data() + word.size()) {
                throw FormatError("sequence text: unknown element '" + std::string(word) + "' at offset " +
                                  std::to_string(i));
            }
            seq.emplace_back(token(id));
        }
        i = end;
    }
    return seq;
}

}  // namespace latentlm
