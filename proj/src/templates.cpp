#include "qda/templates.hpp"

#include "qda/error.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace qda::chain {

// Generated at configure time from templates/.
const std::map<std::string, std::string>& builtin_template_texts();
const std::string& builtin_template_version();

namespace {

constexpr std::array<const char*, 7> required_names{"codes",           "subthemes",   "themes",
                                                     "summary",         "nudge_codes", "nudge_subthemes",
                                                     "nudge_themes"};

} // namespace

TemplateSet TemplateSet::builtin() { return TemplateSet{builtin_template_version(), builtin_template_texts()}; }

TemplateSet TemplateSet::load_directory(const std::filesystem::path& dir, std::string version) {
    TemplateSet set;
    set.version = std::move(version);
    for (const char* name : required_names) {
        std::ifstream in(dir / (std::string(name) + ".txt"));
        if (!in) throw Error(ErrorCode::file_error, "missing template " + (dir / name).string() + ".txt");
        std::ostringstream buf;
        buf << in.rdbuf();
        set.texts.emplace(name, buf.str());
    }
    return set;
}

const std::string& TemplateSet::get(const std::string& name) const {
    auto it = texts.find(name);
    if (it == texts.end()) throw Error(ErrorCode::internal, "no template named '" + name + "'");
    return it->second;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                std::string_view name = tmpl.substr(i + 1, close - i - 1);
                bool known = std::find(template_placeholders.begin(), template_placeholders.end(), name) !=
                             template_placeholders.end();
                auto it = values.find(std::string(name));
                if (known && it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i]);
        ++i;
    }
    return out;
}

} // namespace qda::chain
