#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace qda::chain {

/// Placeholder names recognised in stage templates, written `{name}`.
inline constexpr std::array<std::string_view, 5> template_placeholders{
    "data", "number_of_codes", "user_prompt", "research_questions", "upstream_output"};

/// Versioned set of stage prompt templates: codes, subthemes, themes,
/// summary, nudge_codes, nudge_subthemes, nudge_themes.
struct TemplateSet {
    std::string version;
    std::map<std::string, std::string> texts;

    /// Templates compiled into the engine from templates/<version>/.
    static TemplateSet builtin();
    /// Loads `<dir>/<name>.txt` for every required template name.
    static TemplateSet load_directory(const std::filesystem::path& dir, std::string version);

    const std::string& get(const std::string& name) const;
};

/// Substitutes known placeholders; any other brace text is left alone.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

} // namespace qda::chain
