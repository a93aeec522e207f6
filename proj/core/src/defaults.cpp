#include "crossinit/defaults.hpp"

namespace crossinit::defaults {

const std::vector<std::string>& training_templates() {
  static const std::vector<std::string> t = {"a photo of a {S*} person", "a portrait of {S*}"};
  return t;
}

const std::vector<std::string>& super_category_tokens() {
  static const std::vector<std::string> t = {"human", "face"};
  return t;
}

std::string_view name_list_text() {
  return R"(# Placeholder list of well-known names, one "First Last" per line.
# Pass a longer list with --names; a few hundred names give a steadier mean.
Albert Einstein
Marie Curie
Isaac Newton
Ada Lovelace
Charles Darwin
Nikola Tesla
Jane Austen
Leo Tolstoy
Frida Kahlo
Pablo Picasso
Serena Williams
Roger Federer
Nelson Mandela
Rosa Parks
Taylor Swift
Tom Hanks
Emma Watson
Morgan Freeman
Meryl Streep
Keanu Reeves
)";
}

std::string_view prompt_set_text() {
  return "plain\ta photo of a {S*} person\n"
         "expression\ta {S*} person with a sad expression\n"
         "expression\ta {S*} person with a happy expression\n"
         "expression\ta {S*} person with a puzzled expression\n"
         "expression\ta {S*} person with an angry expression\n"
         "interaction\ta {S*} person plays the LEGO toys\n"
         "background\ta {S*} person on the beach\n"
         "background\ta {S*} person piloting a fighter jet\n"
         "background\ta {S*} person wearing the sweater, a backpack and camping stove, outdoors, RAW, ultra high res\n"
         "background\ta {S*} person wearing a scifi spacesuit in space\n"
         "interaction\ta {S*} person and Anne Hathaway are baking a birthday cake\n"
         "interaction\ta {S*} person and Anne Hathaway taking a relaxing hike in the mountains\n"
         "interaction\ta {S*} person and Anne Hathaway sit on a sofa\n"
         "interaction\ta {S*} person and Anne Hathaway enjoying a day at an amusement park\n"
         "interaction\ta {S*} person shakes hands with Anne Hathaway in news conference\n"
         "style\tcubism painting of a {S*} person\n"
         "style\tfauvism painting of a {S*} person\n"
         "style\tcave mural depicting a {S*} person\n"
         "style\tpointillism painting of a {S*} person\n"
         "style\ta {S*} person latte art\n";
}

}  // namespace crossinit::defaults
