/* Loads a checkpoint and predicts depth with MC dropout on a grey image.
 *
 *   cc predict.c -I../../include -L<target>/release -luqdepth_ffi -lm -lpthread -ldl
 *   ./a.out run/model.uqdn
 */
#include <stdio.h>
#include <stdlib.h>

#include "uqdepth.h"

int main(int argc, char **argv) {
  if (argc != 2) {
    fprintf(stderr, "usage: %s MODEL\n", argv[0]);
    return 2;
  }
  UqdModel *model = NULL;
  UqdStatus st = uqd_model_load(argv[1], &model);
  if (st != UQD_STATUS_OK) {
    fprintf(stderr, "load: %s\n", uqd_last_error());
    return (int)st;
  }
  UqdModelInfo info;
  uqd_model_info(model, &info);
  size_t h = info.input_height, w = info.input_width, n = h * w;

  double *image = malloc(3 * n * sizeof(double));
  double *depth = malloc(n * sizeof(double));
  double *var = malloc(n * sizeof(double));
  for (size_t i = 0; i < 3 * n; i++) image[i] = 0.5;

  UqdPredictOptions opts;
  uqd_predict_options_default(UQD_METHOD_MCD, &opts);
  uint32_t samples = 0;
  st = uqd_predict(model, &opts, image, h, w, depth, var, &samples);
  if (st == UQD_STATUS_OK)
    printf("uqdepth %s: depth[0] = %.4f, variance[0] = %.3g over %u samples\n",
           uqd_version(), depth[0], var[0], samples);
  else
    fprintf(stderr, "predict: %s\n", uqd_last_error());

  free(image);
  free(depth);
  free(var);
  uqd_model_free(model);
  return (int)st;
}
