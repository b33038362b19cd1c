import csv
import json
import logging
import os

logger = logging.getLogger(__name__)

#Archivo donde se guardan las funciones para persistir resultados de experimentos


def _ensure_dir(path):
    if not os.path.exists(path):
        os.makedirs(path)


def save_to_json(data, filename, path, overwrite=False):
    _ensure_dir(path)
    file_path = os.path.join(path, filename)
    #si overwrite es True, sobreescribe el archivo
    if overwrite or not os.path.exists(file_path):
        with open(file_path, 'w', encoding='utf-8') as file:
            json.dump(data, file, indent=4, ensure_ascii=False, sort_keys=True)
            file.write("\n")
        logger.debug(f"JSON saved to {file_path}")
        return file_path
    # el archivo existe: agrega los registros nuevos al historial
    with open(file_path, 'r', encoding='utf-8') as existing_file:
        existing_data = json.load(existing_file)
    existing_data.extend(data if isinstance(data, list) else [data])
    with open(file_path, 'w', encoding='utf-8') as file:
        json.dump(existing_data, file, indent=4, ensure_ascii=False, sort_keys=True)
        file.write("\n")
    logger.debug(f"Data appended to {file_path}")
    return file_path


def read_json(filename, path):
    file_path = os.path.join(path, filename)
    with open(file_path, 'r', encoding='utf-8') as file:
        data = json.load(file)
    return data


def format_value(value):
    """Texto fijo para las celdas CSV: corridas repetidas dan archivos identicos byte a byte."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if hasattr(value, "item"):
        return format_value(value.item())
    return value


def save_to_csv(rows, filename, path, fieldnames=None):
    _ensure_dir(path)
    file_path = os.path.join(path, filename)
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(file_path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.DictWriter(file, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: format_value(value) for key, value in row.items()})
    logger.debug(f"CSV saved to {file_path} ({len(rows)} rows)")
    return file_path


def read_csv(filename, path):
    file_path = os.path.join(path, filename)
    with open(file_path, 'r', encoding='utf-8', newline='') as file:
        return list(csv.DictReader(file))
