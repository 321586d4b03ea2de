#pragma once

// libjpeg glue shared by the image reader and the baseline codec.

#include <csetjmp>
#include <cstdio>

#include <jpeglib.h>

namespace akb::detail {

/// Error manager that longjmps out of libjpeg instead of calling exit().
/// Warnings (corrupt data the decoder recovers from) are counted.
struct jpeg_error_mgr_ex {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
  int warnings;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<jpeg_error_mgr_ex*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline void jpeg_emit_message(j_common_ptr cinfo, int level) {
  if (level < 0) ++reinterpret_cast<jpeg_error_mgr_ex*>(cinfo->err)->warnings;
}

inline jpeg_error_mgr* install_error_mgr(jpeg_error_mgr_ex& err) {
  jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  err.pub.emit_message = jpeg_emit_message;
  err.message[0] = '\0';
  err.warnings = 0;
  return &err.pub;
}

}  // namespace akb::detail
