#include <stdio.h>
#include <stdlib.h>
#include "fieldcast.h"

#define CHECK(call)                                                   \
  do {                                                                \
    FcStatus s_ = (call);                                             \
    if (s_ != FC_STATUS_OK) {                                         \
      char msg[256];                                                  \
      fc_last_error(msg, sizeof msg);                                 \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, msg);         \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  size_t dims[3] = {20, 20, 20};
  double spacing[3] = {4.5, 4.5, 4.5};
  FcVolume *vol = NULL;
  FcLayout *lay = NULL;
  FcField *field = NULL;
  CHECK(fc_phantom_make(dims, spacing, 3, &vol));
  CHECK(fc_layout_place(vol, FC_AXIS_AP, 15.0, &lay));
  CHECK(fc_solve_field(vol, lay, &field));
  size_t n = fc_field_len(field);
  double *e = malloc(n * sizeof *e);
  CHECK(fc_field_values(field, e, n));
  double peak = 0.0;
  for (size_t i = 0; i < n; i++)
    if (e[i] > peak) peak = e[i];
  printf("voxels %zu peak %.4f\n", n, peak);

  FcForest *forest = NULL;
  if (fc_forest_load("/nonexistent.vforest", &forest) != FC_STATUS_IO) return 2;

  free(e);
  fc_field_free(field);
  fc_layout_free(lay);
  fc_volume_free(vol);
  return peak > 0.0 ? 0 : 3;
}
