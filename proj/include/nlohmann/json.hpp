#pragma once

// Alias to the vendored single-header JSON library (vendor/json.hpp), kept
// reachable under its canonical include path.

#include <json.hpp>
