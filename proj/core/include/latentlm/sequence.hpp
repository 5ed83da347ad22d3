#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace latentlm {

enum class TokenId : std::uint32_t {};

constexpr std::uint32_t raw(TokenId id) { return static_cast<std::uint32_t>(id); }
constexpr TokenId token(std::uint32_t id) { return static_cast<TokenId>(id); }

using LatentVec = std::vector<double>;
using SequenceElement = std::variant<TokenId, LatentVec>;
using MixedSequence = std::vector<SequenceElement>;

inline bool is_discrete(const SequenceElement& e) { return std::holds_alternative<TokenId>(e); }
inline bool is_continuous(const SequenceElement& e) { return std::holds_alternative<LatentVec>(e); }

/// Layout: six reserved markers, then class tokens, then plain text tokens.
class Vocabulary {
public:
    static constexpr TokenId PAD = token(0);
    static constexpr TokenId BOS = token(1);
    static constexpr TokenId EOS = token(2);
    static constexpr TokenId BOD = token(3);
    static constexpr TokenId EOD = token(4);
    static constexpr TokenId UNCOND = token(5);
    static constexpr std::uint32_t kReserved = 6;

    Vocabulary() = default;
    Vocabulary(std::size_t n_classes, std::size_t n_text) : n_classes_(n_classes), n_text_(n_text) {}

    std::size_t size() const { return kReserved + n_classes_ + n_text_; }
    std::size_t n_classes() const { return n_classes_; }
    std::size_t n_text() const { return n_text_; }

    TokenId class_token(std::size_t c) const;
    TokenId text_token(std::size_t i) const;
    bool is_class(TokenId id) const;
    bool is_text(TokenId id) const;
    std::size_t class_of(TokenId id) const;
    std::size_t text_index(TokenId id) const;
    bool contains(TokenId id) const { return raw(id) < size(); }

private:
    std::size_t n_classes_ = 0;
    std::size_t n_text_ = 0;
};

/// Throws VocabularyError (unknown id), StructureError (BOD/EOD misuse,
/// continuous element outside a block), DimensionError (latent length) or
/// CapacityError (too long). An unclosed trailing block is accepted only when
/// `allow_open_block` is set, as in a generation prompt ending in BOD.
void validate_sequence(const MixedSequence& seq, const Vocabulary& vocab, std::size_t d_latent,
                       std::size_t max_len, bool allow_open_block = false);

/// Whitespace separated: markers by name (<BOS>, <BOD>, ...), other tokens as
/// integers, latents as bracketed comma lists. Doubles print with 17
/// significant digits, so parse(format(s)) == s exactly.
std::string format_sequence(const MixedSequence& seq);
MixedSequence parse_sequence(std::string_view text);

/// Name of a reserved marker, or empty.
std::string_view marker_name(TokenId id);

}  // namespace latentlm
