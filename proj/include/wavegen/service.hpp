#ifndef WAVEGEN_SERVICE_HPP
#define WAVEGEN_SERVICE_HPP

#include <string>

#include "wavegen/generate.hpp"

namespace httplib {
class Server;
}

namespace wavegen {

/// Register the generation API on an HTTP server sharing one immutable
/// generator snapshot:
///   GET  /api/model       -> {arch, d, c, latent_dim, sample_rate, ckpt_iteration}
///   POST /api/generate    -> audio/wav (single) or JSON array of
///                            {z, wav_base64} (count > 1); body: optional z
///                            XOR seed, optional count (default 1)
///   POST /api/interpolate -> JSON array of {z, wav_base64}; body
///                            {z_a, z_b, steps}, endpoints included
/// All responses carry permissive CORS headers. Malformed JSON -> 400,
/// latent-length violations -> 422, generation failures -> 500.
void setup_service_routes(httplib::Server& srv, const LoadedGenerator& lg);

/// Load the checkpoint and serve forever on the given port.
void serve(const std::string& ckpt_path, int port);

std::string base64_encode(const std::vector<uint8_t>& bytes);

}  // namespace wavegen

#endif
