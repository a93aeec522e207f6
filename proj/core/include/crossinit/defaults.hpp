#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace crossinit::defaults {

/// Context used to compute E(mean name embedding).
inline constexpr std::string_view kInitTemplate = "a photo of a {S*} person";
inline constexpr std::string_view kClassWord = "person";

/// Neutral captions used as training prompts.
const std::vector<std::string>& training_templates();
/// Tokens used by the super-category initialization, one per concept slot.
const std::vector<std::string>& super_category_tokens();

/// Placeholder list of well-known two-token names (the toy vocabulary
/// contains every token). Same content as data/names.txt.
std::string_view name_list_text();

/// The 20 evaluation prompts as "tag<TAB>prompt" lines. Same content as
/// data/prompts.txt.
std::string_view prompt_set_text();

}  // namespace crossinit::defaults
