#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace tvmerge {

// Target/support/proxy mapping for the 26 shared-task languages. Support
// languages are genetically related higher-resource languages with scripted
// Common Voice data; the proxy is the Whisper pre-training language whose
// token is fixed during decoding.
struct LanguageMapping {
    std::string target;
    std::string name;
    std::string family;
    std::vector<std::string> supports;
    std::string proxy;
    std::string script;
    bool test_only = false;
};

inline const std::vector<LanguageMapping>& language_table() {
    static const std::vector<LanguageMapping> table = {
        {"bxk", "Bukusu", "Bantu, Zone J", {"lg"}, "Swahili", "Latin", false},
        {"cgg", "Chiga", "Bantu, Zone J", {"lg"}, "Swahili", "Latin", false},
        {"koo", "Konzo", "Bantu, Zone J", {"lg"}, "Swahili", "Latin", false},
        {"lke", "Kenyi", "Bantu, Zone J", {"lg"}, "Swahili", "Latin", false},
        {"ruc", "Ruuli", "Bantu, Zone J", {"lg"}, "Swahili", "Latin", false},
        {"ttj", "Rutoro", "Bantu, Zone J", {"lg"}, "Swahili", "Latin", false},
        {"rwm", "Amba", "Bantu, Zone D", {"lg"}, "Swahili", "Latin", false},
        {"bas", "Basaa", "Bantu, Zone A", {"lg"}, "Swahili", "Latin", true},
        {"kcn", "Nubi", "Afro-Asiatic, Semitic", {"mt"}, "Maltese", "Latin", false},
        {"led", "Lendu", "Nilo-Saharan, E. Sudanic, Central", {"luo", "kln"}, "Somali", "Latin",
         false},
        {"lth", "Thur", "Nilo-Saharan, E. Sudanic, W. Nilotic", {"luo", "kln"}, "Somali", "Latin",
         false},
        {"ukv", "Kuku", "Nilo-Saharan, E. Sudanic, E. Nilotic", {"luo", "kln"}, "Somali", "Latin",
         false},
        {"hch", "Wixarika", "Uto-Aztecan", {"ncx", "nhi", "nlv", "yaq", "tar", "var"}, "Spanish",
         "Latin", false},
        {"meh", "SW Tlaxiaco Mixtec", "Oto-Manguean, Mixtecan", {"cut", "cux", "mau"}, "Spanish",
         "Latin", false},
        {"mmc", "Michoacan Mazahua", "Oto-Manguean, Otomian", {"cut", "cux", "mau"}, "Spanish",
         "Latin", false},
        {"top", "Papantla Totonac", "Totonacan", {}, "Spanish", "Latin", false},
        {"qxp", "Puno Quechua", "Quechuan",
         {"qup", "qux", "qur", "quy", "qus", "qxa", "qxu", "qxw", "qxt", "qvl", "qva", "qwa",
          "qws"},
         "Spanish", "Latin", true},
        {"tob", "Toba Qom", "Guaicuruan", {}, "Spanish", "Latin", false},
        {"aln", "Gheg Albanian", "Indo-European, Albanian", {"sq"}, "Albanian", "Latin", false},
        {"el-CY", "Cypriot Greek", "Indo-European, Greek", {"el"}, "Greek", "Greek", false},
        {"sco", "Scots", "Indo-European, Germanic, West", {}, "English", "Latin", false},
        {"ush", "Ushojo", "Indo-European, Indo-Aryan, Dardic", {"ur"}, "Urdu", "Perso-Arabic",
         true},
        {"ady", "Adyghe", "Northwest Caucasian", {"ab"}, "Kazakh", "Cyrillic & Latin", true},
        {"kbd", "Kabardian", "Northwest Caucasian", {"ab"}, "Kazakh", "Cyrillic & Latin", true},
        {"bew", "Betawi", "Austronesian, Malay", {"id", "ms"}, "Malay", "Latin", false},
        {"pne", "Western Penan", "Austronesian, Malayo-Polynesian, Kenyah", {"id", "ms"}, "Malay",
         "Latin", false},
    };
    return table;
}

inline const LanguageMapping& lookup_language(const std::string& target) {
    for (const auto& row : language_table())
        if (row.target == target) return row;
    throw std::runtime_error("unknown target language code: " + target);
}

inline const std::map<std::string, std::string>& support_language_names() {
    static const std::map<std::string, std::string> names = {
        {"ab", "Abkhaz"},
        {"cut", "Teutila Cuicatec"},
        {"cux", "Tepeuixila Cuicatec"},
        {"el", "Greek"},
        {"id", "Indonesian"},
        {"kln", "Kalenjin"},
        {"lg", "Luganda"},
        {"luo", "Dholuo"},
        {"mau", "Huautla Mazatec"},
        {"ms", "Malay"},
        {"mt", "Maltese"},
        {"ncx", "Central Puebla Nahuatl"},
        {"nhi", "Tetelancingo Nahuatl"},
        {"nlv", "Orizaba Nahuatl"},
        {"qup", "Southern Pastaza Quechua"},
        {"qur", "Quechua Yanahuanca"},
        {"qus", "Quechua Santiago del Estero"},
        {"qux", "Quechua Yauyos"},
        {"quy", "Quechua Chanka"},
        {"qva", "Quechua Ambo-Pasco"},
        {"qvl", "Quechua Cajatambo"},
        {"qwa", "Quechua Corongo Ancash"},
        {"qws", "Quechua Sihuas Ancash"},
        {"qxa", "Quechua Chiquian"},
        {"qxt", "Quechua Pasco Santa Ana de Tusi"},
        {"qxu", "Quechua Arequipa-La Union"},
        {"qxw", "Quechua Jauja Wanka"},
        {"sq", "Albanian"},
        {"tar", "Central Tarahumara"},
        {"ur", "Urdu"},
        {"var", "Huarijio"},
        {"yaq", "Yaqui"},
    };
    return names;
}

inline nlohmann::json mapping_to_json(const LanguageMapping& row) {
    return {{"target", row.target},     {"name", row.name},   {"family", row.family},
            {"supports", row.supports}, {"proxy", row.proxy}, {"script", row.script},
            {"test_only", row.test_only}};
}

}  // namespace tvmerge
