from neural_processes.datasets import make_moons, make_multimodal_views, save_feature_dataset, view_maps
from neural_processes.data_processing import save_to_json
import os

# Genera los datasets sinteticos en formato CSV (una matriz por modalidad + labels.csv),
# listos para usar con --dataset files


if __name__ == "__main__":
    destino = os.path.join(os.path.dirname(__file__), 'mnpCore', 'datasets')
    seed = 0
    moons = make_moons(1200, noise_std=0.15, seed=seed)
    views = make_multimodal_views(moons, 3, seed=seed, maps=view_maps(3, 2, seed))
    generados = []
    for nombre, batch in (('moons', moons), ('moons_views', views)):
        paths, labels_path = save_feature_dataset(batch, os.path.join(destino, nombre))
        generados.append({'dataset': nombre, 'feature_paths': paths, 'labels_path': labels_path,
                          'n_samples': batch.n_samples, 'n_modalities': batch.n_modalities, 'seed': seed})
    save_to_json(generados, 'datasets.json', destino, overwrite=True)
    save_to_json(generados, 'datasets_historical.json', destino)
