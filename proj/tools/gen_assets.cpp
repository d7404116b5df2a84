// Regenerates the bundled template assets.
#include "freehead/gaze_geometry.hpp"

#include <iostream>

int main(int argc, char** argv) {
  const std::string dir = argc > 1 ? argv[1] : FREEHEAD_ASSET_DIR;
  freehead::save_keypoint_template(dir + "/kp_template.txt", freehead::procedural_keypoint_template());
  freehead::save_eye_template(dir + "/eye_template.txt", freehead::procedural_eye_template());
  std::cout << "wrote templates to " << dir << '\n';
}
