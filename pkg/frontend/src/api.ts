/** Typed client for the query API. The UI performs no computation over
 * raw data; everything it shows comes from these endpoints. */

export interface PageRef {
  library_id: string;
  collection_id: string;
  volume_id: string;
  page_index: number;
  canvas_id?: string;
}

export interface Box {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
  confidence: number;
}

export interface RecordPayload {
  record_id: string;
  caption: string | null;
  caption_model: string | null;
  crop_url: string;
  iiif_url: string;
  page_ref: PageRef;
  box: Box;
}

export interface SearchResult extends RecordPayload {
  score: number;
}

export interface SearchResponse {
  schema_version: number;
  query: string;
  results: SearchResult[];
}

export interface RecordDetail extends RecordPayload {
  schema_version: number;
  community?: number | null;
}

export interface Neighbor extends RecordPayload {
  weight: number;
}

export interface NeighborsResponse {
  schema_version: number;
  record_id: string;
  neighbors: Neighbor[];
}

export interface CommunitySummary {
  community_id: number;
  size: number;
  sample_thumbnails: string[];
  sample_records: string[];
}

export interface CommunitiesResponse {
  schema_version: number;
  communities: CommunitySummary[];
}

export interface CommunityDetail {
  schema_version: number;
  community_id: number;
  size: number;
  members: RecordPayload[];
}

export interface GraphNode {
  id: string;
  community: number | null;
  caption?: string;
  thumbnail?: string;
}

export interface GraphLink {
  source: string;
  target: string;
  weight: number;
}

export interface GraphPayload {
  schema_version: number;
  k: number;
  directed: boolean;
  nodes: GraphNode[];
  links: GraphLink[];
}

export interface Stats {
  schema_version: number;
  pages: number;
  illustrations: number;
  captions: number;
  indexed_documents: number;
  graph_nodes: number;
  graph_edges: number;
  communities: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function getJson<T>(url: string): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url);
  } catch (err) {
    throw new ApiError(0, `network failure: ${String(err)}`);
  }
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  search(query: string, top = 60): Promise<SearchResponse> {
    const params = new URLSearchParams({ q: query, top: String(top) });
    return getJson(`${this.baseUrl}/api/search?${params}`);
  }

  record(recordId: string): Promise<RecordDetail> {
    return getJson(`${this.baseUrl}/api/illustrations/${encodeURIComponent(recordId)}`);
  }

  neighbors(recordId: string, k = 10): Promise<NeighborsResponse> {
    const params = new URLSearchParams({ k: String(k) });
    return getJson(
      `${this.baseUrl}/api/illustrations/${encodeURIComponent(recordId)}/neighbors?${params}`,
    );
  }

  communities(): Promise<CommunitiesResponse> {
    return getJson(`${this.baseUrl}/api/communities`);
  }

  community(communityId: number): Promise<CommunityDetail> {
    return getJson(`${this.baseUrl}/api/communities/${communityId}`);
  }

  graph(): Promise<GraphPayload> {
    return getJson(`${this.baseUrl}/api/graph`);
  }

  stats(): Promise<Stats> {
    return getJson(`${this.baseUrl}/api/stats`);
  }
}
